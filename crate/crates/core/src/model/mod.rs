//! Decoder-only transformer with per-layer residual traces.
//!
//! Blocks are pre-norm: `x + attn(norm(x))` then `x + mlp(norm(x))`. The trace
//! point for layer `l` (1-based) is the residual stream after block `l`.
//! Layers use either causal multi-head softmax attention or single-head
//! `elu + 1` linear attention; everything else is shared.

mod checkpoint;
mod config;
mod freeze;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{BlockKind, ModelConfig, MLP_RATIO, NORM_EPS};
pub use freeze::FreezePlan;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ProbabilityDistribution, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

/// Which freeze/train unit a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Token and position embeddings (and the tied LM head).
    Embedding,
    /// Block `l`, 0-based.
    Layer(usize),
    /// Final norm, LM-head bias and an untied LM-head matrix.
    Head,
}

impl ParamGroup {
    pub fn label(&self) -> String {
        match self {
            ParamGroup::Embedding => "embedding".into(),
            ParamGroup::Layer(l) => format!("layer.{}", l + 1),
            ParamGroup::Head => "head".into(),
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "embedding" => Some(ParamGroup::Embedding),
            "head" => Some(ParamGroup::Head),
            _ => label
                .strip_prefix("layer.")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| ParamGroup::Layer(n - 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct BlockSlots {
    attn_norm: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    mlp_norm: usize,
    w1: usize,
    w2: usize,
}

#[derive(Debug, Clone, Copy)]
struct GlobalSlots {
    tok_emb: usize,
    pos_emb: usize,
    final_norm: usize,
    lm_head: Option<usize>,
    lm_bias: usize,
}

/// Residual-stream states of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateTrace {
    pub token_ids: Vec<usize>,
    /// `states[l - 1]` is `h_l`, shaped `[seq_len, d_model]`.
    pub states: Vec<Tensor>,
    /// Output distribution at the last position.
    pub final_distribution: ProbabilityDistribution,
}

impl HiddenStateTrace {
    pub fn n_layers(&self) -> usize {
        self.states.len()
    }

    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    /// `h_l` for 1-based `l`.
    pub fn hidden(&self, layer: usize) -> Result<&Tensor> {
        if layer == 0 || layer > self.states.len() {
            return Err(Error::InvalidLayer {
                layer,
                n_layers: self.states.len(),
            });
        }
        Ok(&self.states[layer - 1])
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    seed: u64,
    params: Vec<Param>,
    blocks: Vec<BlockSlots>,
    globals: GlobalSlots,
    trainable: Vec<bool>,
}

impl Model {
    /// Deterministic initialization: weights ~ N(0, 0.02²), norm gains 1,
    /// biases 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let (d, v, ff) = (config.d_model, config.vocab_size, config.d_ff());

        let mut params = Vec::new();
        let mut add = |name: String, group: ParamGroup, shape: &[usize], init: Init| {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            params.push(Param {
                name,
                group,
                tensor: Tensor::new(shape.to_vec(), data).expect("shape"),
            });
            params.len() - 1
        };

        let tok_emb = add("tok_emb".into(), ParamGroup::Embedding, &[v, d], Init::Normal);
        let pos_emb = add("pos_emb".into(), ParamGroup::Embedding, &[config.max_seq_len, d], Init::Normal);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let g = ParamGroup::Layer(l);
            let p = |s: &str| format!("layers.{}.{s}", l + 1);
            blocks.push(BlockSlots {
                attn_norm: add(p("attn_norm"), g, &[d], Init::Ones),
                wq: add(p("wq"), g, &[d, d], Init::Normal),
                wk: add(p("wk"), g, &[d, d], Init::Normal),
                wv: add(p("wv"), g, &[d, d], Init::Normal),
                wo: add(p("wo"), g, &[d, d], Init::Normal),
                mlp_norm: add(p("mlp_norm"), g, &[d], Init::Ones),
                w1: add(p("w1"), g, &[d, ff], Init::Normal),
                w2: add(p("w2"), g, &[ff, d], Init::Normal),
            });
        }
        let final_norm = add("final_norm".into(), ParamGroup::Head, &[d], Init::Ones);
        let lm_head = (!config.tie_lm_head).then(|| add("lm_head".into(), ParamGroup::Head, &[v, d], Init::Normal));
        let lm_bias = add("lm_bias".into(), ParamGroup::Head, &[v], Init::Zeros);

        let n_params = params.len();
        Ok(Self {
            config,
            seed,
            params,
            blocks,
            globals: GlobalSlots {
                tok_emb,
                pos_emb,
                final_norm,
                lm_head,
                lm_bias,
            },
            trainable: vec![true; n_params],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn is_trainable(&self, idx: usize) -> bool {
        self.trainable[idx]
    }

    /// Scalar count of all parameter values.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params
            .iter()
            .zip(&self.trainable)
            .filter(|(_, t)| **t)
            .map(|(p, _)| p.tensor.len())
            .sum()
    }

    /// Marks parameters trainable or frozen per `plan`. Frozen parameters are
    /// skipped entirely by the optimizer.
    pub fn apply_freeze_plan(&mut self, plan: &FreezePlan) -> Result<()> {
        if plan.trainable.len() != self.config.n_layers {
            return Err(Error::invalid(format!(
                "freeze plan covers {} layers, model has {}",
                plan.trainable.len(),
                self.config.n_layers
            )));
        }
        for (i, p) in self.params.iter().enumerate() {
            self.trainable[i] = match p.group {
                ParamGroup::Embedding => plan.embeddings_trainable,
                ParamGroup::Layer(l) => plan.trainable[l],
                ParamGroup::Head => plan.lm_head_trainable,
            };
        }
        Ok(())
    }

    /// SHA-256 over the canonical byte image of every parameter in `group`:
    /// name, then shape as u64 LE, then values as f64 LE.
    pub fn group_digest(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            hash_param(&mut h, p);
        }
        hex::encode(h.finalize())
    }

    /// Digest of each block, index `l - 1` for layer `l`.
    pub fn layer_digests(&self) -> Vec<String> {
        (0..self.config.n_layers)
            .map(|l| self.group_digest(ParamGroup::Layer(l)))
            .collect()
    }

    /// Digest over the frozen parameters only, in parameter order.
    pub fn frozen_digest(&self) -> String {
        let mut h = Sha256::new();
        for (p, _) in self.params.iter().zip(&self.trainable).filter(|(_, t)| !**t) {
            hash_param(&mut h, p);
        }
        hex::encode(h.finalize())
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            hash_param(&mut h, p);
        }
        hex::encode(h.finalize())
    }

    /// Copies block `src_layer` of `donor` into block `dst_layer` (0-based).
    pub fn copy_block_from(&mut self, donor: &Model, src_layer: usize, dst_layer: usize) -> Result<()> {
        if src_layer >= donor.n_layers() || dst_layer >= self.n_layers() {
            return Err(Error::InvalidConfig("block index out of range".into()));
        }
        if donor.config.block_layout[src_layer] != self.config.block_layout[dst_layer] {
            return Err(Error::InvalidConfig(format!(
                "cannot copy a {:?} block into a {:?} slot",
                donor.config.block_layout[src_layer], self.config.block_layout[dst_layer]
            )));
        }
        let src = block_indices(&donor.blocks[src_layer]);
        let dst = block_indices(&self.blocks[dst_layer]);
        for (s, t) in src.into_iter().zip(dst) {
            if donor.params[s].tensor.shape() != self.params[t].tensor.shape() {
                return Err(Error::InvalidConfig(format!(
                    "shape mismatch copying {} into {}",
                    donor.params[s].name, self.params[t].name
                )));
            }
            self.params[t].tensor = donor.params[s].tensor.clone();
        }
        Ok(())
    }

    /// Copies embeddings, final norm and LM head from `donor`.
    pub fn copy_embeddings_and_head_from(&mut self, donor: &Model) -> Result<()> {
        for p in self.params.iter_mut().filter(|p| !matches!(p.group, ParamGroup::Layer(_))) {
            let src = donor
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::InvalidConfig(format!("donor lacks {}", p.name)))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(Error::InvalidConfig(format!("shape mismatch for {}", p.name)));
            }
            p.tensor = src.tensor.clone();
        }
        Ok(())
    }

    fn session(&self) -> Session<'_> {
        Session {
            model: self,
            graph: Graph::new(),
            vars: vec![None; self.params.len()],
        }
    }

    /// Runs every block and records the residual stream after each one.
    pub fn forward_with_trace(&self, token_ids: &[usize]) -> Result<HiddenStateTrace> {
        let mut s = self.session();
        let mut x = s.embed(token_ids)?;
        let mut states = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            x = s.block(l, x)?;
            states.push(s.graph.value(x).clone());
        }
        let final_distribution = s.last_position_distribution(x, true)?;
        Ok(HiddenStateTrace {
            token_ids: token_ids.to_vec(),
            states,
            final_distribution,
        })
    }

    /// Feeds `hidden` (the residual stream after block `start_layer`) through
    /// blocks `start_layer + 1 ..= N`, then the final norm and LM head at the
    /// last position. `start_layer == 0` means `hidden` is the embedding output.
    pub fn forward_from_layer(&self, hidden: &Tensor, start_layer: usize) -> Result<ProbabilityDistribution> {
        if start_layer > self.n_layers() {
            return Err(Error::invalid(format!(
                "start layer {start_layer} beyond {} layers",
                self.n_layers()
            )));
        }
        self.check_hidden(hidden)?;
        let mut s = self.session();
        let mut x = s.graph.leaf(hidden.clone());
        for l in start_layer..self.n_layers() {
            x = s.block(l, x)?;
        }
        s.last_position_distribution(x, true)
    }

    /// Shared-head projection of the last row of `hidden`, with or without
    /// the final RMSNorm.
    pub fn project_last(&self, hidden: &Tensor, apply_final_norm: bool) -> Result<ProbabilityDistribution> {
        self.check_hidden(hidden)?;
        let mut s = self.session();
        let x = s.graph.leaf(hidden.clone());
        s.last_position_distribution(x, apply_final_norm)
    }

    fn check_hidden(&self, hidden: &Tensor) -> Result<()> {
        if hidden.ndim() != 2 || hidden.cols() != self.config.d_model || hidden.rows() == 0 {
            return Err(Error::invalid(format!(
                "hidden state shape {:?} does not match [seq_len, {}]",
                hidden.shape(),
                self.config.d_model
            )));
        }
        Ok(())
    }

    /// Mean next-token cross-entropy of `targets` given `inputs`, plus the
    /// gradient for every parameter (zero for parameters the loss skips).
    pub fn loss_and_grads(&self, inputs: &[usize], targets: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let mut s = self.session();
        let loss = s.loss(inputs, targets)?;
        let value = s.graph.value(loss).data()[0];
        let grads = s.graph.backward(loss)?;
        let out = s
            .vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| {
                v.and_then(|v| grads[v.index()].clone())
                    .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
            })
            .collect();
        Ok((value, out))
    }

    /// Loss only, no gradient.
    pub fn loss(&self, inputs: &[usize], targets: &[usize]) -> Result<f64> {
        let mut s = self.session();
        let loss = s.loss(inputs, targets)?;
        Ok(s.graph.value(loss).data()[0])
    }
}

enum Init {
    Normal,
    Ones,
    Zeros,
}

fn block_indices(b: &BlockSlots) -> [usize; 8] {
    [b.attn_norm, b.wq, b.wk, b.wv, b.wo, b.mlp_norm, b.w1, b.w2]
}

fn hash_param(h: &mut Sha256, p: &Param) {
    h.update(p.name.as_bytes());
    for &dim in p.tensor.shape() {
        h.update((dim as u64).to_le_bytes());
    }
    h.update(p.tensor.to_le_bytes());
}

/// One recorded evaluation over a model's parameters.
struct Session<'m> {
    model: &'m Model,
    graph: Graph,
    vars: Vec<Option<Var>>,
}

impl Session<'_> {
    fn p(&mut self, idx: usize) -> Var {
        if let Some(v) = self.vars[idx] {
            return v;
        }
        let v = self.graph.leaf(self.model.params[idx].tensor.clone());
        self.vars[idx] = Some(v);
        v
    }

    fn embed(&mut self, ids: &[usize]) -> Result<Var> {
        let cfg = &self.model.config;
        if ids.is_empty() || ids.len() > cfg.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} outside 1..={}",
                ids.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} >= vocab size {}",
                cfg.vocab_size
            )));
        }
        let g = self.model.globals;
        let tok = self.p(g.tok_emb);
        let pos = self.p(g.pos_emb);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let te = self.graph.gather(tok, ids)?;
        let pe = self.graph.gather(pos, &positions)?;
        self.graph.add(te, pe)
    }

    fn block(&mut self, layer: usize, x: Var) -> Result<Var> {
        let b = self.model.blocks[layer];
        let kind = self.model.config.block_layout[layer];
        let heads = self.model.config.n_heads;

        let g1 = self.p(b.attn_norm);
        let h = self.graph.rmsnorm(x, g1, NORM_EPS)?;
        let (wq, wk, wv, wo) = (self.p(b.wq), self.p(b.wk), self.p(b.wv), self.p(b.wo));
        let q = self.graph.matmul(h, wq)?;
        let k = self.graph.matmul(h, wk)?;
        let v = self.graph.matmul(h, wv)?;
        let a = match kind {
            BlockKind::FullAttention => self.graph.causal_attention(q, k, v, heads)?,
            BlockKind::LinearAttention => self.graph.linear_attention(q, k, v)?,
        };
        let a = self.graph.matmul(a, wo)?;
        let x = self.graph.add(x, a)?;

        let g2 = self.p(b.mlp_norm);
        let h = self.graph.rmsnorm(x, g2, NORM_EPS)?;
        let (w1, w2) = (self.p(b.w1), self.p(b.w2));
        let u = self.graph.matmul(h, w1)?;
        let u = self.graph.gelu(u);
        let m = self.graph.matmul(u, w2)?;
        self.graph.add(x, m)
    }

    fn logits(&mut self, x: Var, apply_final_norm: bool) -> Result<Var> {
        let g = self.model.globals;
        let h = if apply_final_norm {
            let gain = self.p(g.final_norm);
            self.graph.rmsnorm(x, gain, NORM_EPS)?
        } else {
            x
        };
        let head = self.p(g.lm_head.unwrap_or(g.tok_emb));
        let z = self.graph.matmul_bt(h, head)?;
        let bias = self.p(g.lm_bias);
        self.graph.add_row(z, bias)
    }

    fn last_position_distribution(&mut self, x: Var, apply_final_norm: bool) -> Result<ProbabilityDistribution> {
        let last = self.graph.value(x).rows() - 1;
        let row = self.graph.select_row(x, last)?;
        let z = self.logits(row, apply_final_norm)?;
        let logits = self.graph.value(z).data();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logits"));
        }
        crate::numerics::softmax(logits)
    }

    fn loss(&mut self, inputs: &[usize], targets: &[usize]) -> Result<Var> {
        if inputs.len() != targets.len() {
            return Err(Error::invalid("inputs and targets differ in length"));
        }
        let mut x = self.embed(inputs)?;
        for l in 0..self.model.n_layers() {
            x = self.block(l, x)?;
        }
        let z = self.logits(x, true)?;
        self.graph.cross_entropy(z, targets)
    }
}

#[cfg(test)]
mod tests;
