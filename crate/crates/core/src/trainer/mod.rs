//! AdamW training of the toy model, continued pre-training under layer
//! freeze strategies, and paired hybrid-placement runs.

mod corpus;
mod experiment;
mod hybrid;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{antonym_lines, corpus_a, corpus_b, synonym_lines, DomainCorpus, TokenCorpus};
pub use experiment::{format_table, table_csv, write_run_artifacts, DeskReport, DeskSettings};
pub use hybrid::{build_hybrid, hybrid_placement_run, Placement};

use crate::diagnostics::Fraction;
use crate::error::{Error, Result};
use crate::model::{FreezePlan, Model};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub seed: u64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            betas: (0.9, 0.95),
            weight_decay: 0.01,
            warmup_ratio: 0.1,
            batch_size: 8,
            seq_len: 32,
            steps: 100,
            seed: 0,
            adam_eps: 1e-8,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup ratio {} outside [0, 1]", self.warmup_ratio));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return bad("weight decay must be >= 0 and adam eps > 0".into());
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch size and sequence length must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.steps as f64).round() as usize
    }

    /// Learning rate at 1-based `step`: `lr * step / W` while `step < W`,
    /// then `lr`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            self.learning_rate * step as f64 / w as f64
        } else {
            self.learning_rate
        }
    }
}

/// AdamW with decoupled weight decay on matrices only.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Updates every trainable parameter. Frozen ones are not touched.
    pub fn step(&mut self, model: &mut Model, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            if !model.is_trainable(i) {
                continue;
            }
            let decay = if model.params()[i].tensor.ndim() == 2 { cfg.weight_decay } else { 0.0 };
            let p = model.params_mut()[i].tensor.data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g.data()[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g.data()[j] * g.data()[j];
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
                p[j] -= lr * (update + decay * p[j]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    /// Mean batch cross-entropy at each step.
    pub loss_curve: Vec<f64>,
    /// Held-out per-token loss keyed by corpus name.
    pub eval_losses: BTreeMap<String, f64>,
    pub frozen_param_hash_before: String,
    pub frozen_param_hash_after: String,
    pub layer_digests_before: Vec<String>,
    pub layer_digests_after: Vec<String>,
    pub frozen_layers: Vec<usize>,
    pub trainable_params: usize,
}

impl RunRecord {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }

    pub fn frozen_unchanged(&self) -> bool {
        self.frozen_param_hash_before == self.frozen_param_hash_after
            && self
                .frozen_layers
                .iter()
                .all(|&l| self.layer_digests_before[l - 1] == self.layer_digests_after[l - 1])
    }
}

/// Runs `config.steps` AdamW steps on `corpus` with the model's current
/// freeze plan, then evaluates on `evals`.
pub fn train(
    model: &mut Model,
    corpus: &TokenCorpus,
    config: &TrainConfig,
    label: &str,
    evals: &[&TokenCorpus],
) -> Result<RunRecord> {
    config.validate()?;
    corpus.check_trainable(config.batch_size, config.seq_len)?;
    if config.seq_len > model.config().max_seq_len {
        return Err(Error::InvalidConfig(format!(
            "training sequence length {} exceeds model max {}",
            config.seq_len,
            model.config().max_seq_len
        )));
    }
    let frozen_layers: Vec<usize> = (1..=model.n_layers())
        .filter(|&l| {
            model
                .params()
                .iter()
                .enumerate()
                .any(|(i, p)| p.group == crate::model::ParamGroup::Layer(l - 1) && !model.is_trainable(i))
        })
        .collect();
    let frozen_before = model.frozen_digest();
    let layers_before = model.layer_digests();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(model);
    let mut loss_curve = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let batch = corpus.sample_batch(&mut rng, config.batch_size, config.seq_len);
        let (loss, grads) = batch_gradient(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {loss} after {} finite steps", step - 1),
            });
        }
        let mut grads = grads;
        if let Some(clip) = config.grad_clip {
            clip_global_norm(model, &mut grads, clip);
        }
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Divergence {
                step,
                detail: format!("non-finite gradient for {}", model.params()[i].name),
            });
        }
        opt.step(model, &grads, config.lr_at(step), config);
        loss_curve.push(loss);
        log::debug!("{label} step {step} loss {loss:.6}");
    }

    let mut eval_losses = BTreeMap::new();
    for c in evals {
        eval_losses.insert(c.name.clone(), evaluate_lm(model, c, config.seq_len)?);
    }
    Ok(RunRecord {
        label: label.to_string(),
        loss_curve,
        eval_losses,
        frozen_param_hash_before: frozen_before,
        frozen_param_hash_after: model.frozen_digest(),
        layer_digests_before: layers_before,
        layer_digests_after: model.layer_digests(),
        frozen_layers,
        trainable_params: model.trainable_param_count(),
    })
}

/// Mean loss and mean gradient over a batch, summed in batch order.
fn batch_gradient(model: &Model, batch: &[(Vec<usize>, Vec<usize>)]) -> Result<(f64, Vec<Tensor>)> {
    let mut total = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for (x, y) in batch {
        let (loss, grads) = model.loss_and_grads(x, y)?;
        total += loss;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    let n = batch.len() as f64;
    let mut grads = sum.unwrap_or_default();
    for g in &mut grads {
        g.scale_in_place(1.0 / n);
    }
    Ok((total / n, grads))
}

fn clip_global_norm(model: &Model, grads: &mut [Tensor], clip: f64) {
    let norm = grads
        .iter()
        .enumerate()
        .filter(|(i, _)| model.is_trainable(*i))
        .flat_map(|(_, g)| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        for g in grads.iter_mut() {
            g.scale_in_place(clip / norm);
        }
    }
}

/// Pre-training from the current parameters with every parameter trainable.
pub fn pretrain(model: &mut Model, corpus: &TokenCorpus, config: &TrainConfig, evals: &[&TokenCorpus]) -> Result<RunRecord> {
    model.apply_freeze_plan(&FreezePlan::all_trainable(model.n_layers()))?;
    train(model, corpus, config, "pretrain", evals)
}

/// Teacher-forced mean next-token cross-entropy in nats over every token
/// of `corpus` after the first.
pub fn evaluate_lm(model: &Model, corpus: &TokenCorpus, seq_len: usize) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(Error::invalid(format!("corpus {} is too short to evaluate", corpus.name)));
    }
    let seq_len = seq_len.min(model.config().max_seq_len);
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in corpus.eval_windows(seq_len) {
        total += model.loss(&x, &y)? * y.len() as f64;
        count += y.len();
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FullParameter,
    TrainShallowFreezeDeep,
    FreezeShallowTrainDeep,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::FullParameter,
        StrategyKind::TrainShallowFreezeDeep,
        StrategyKind::FreezeShallowTrainDeep,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::FullParameter => "full-parameter",
            StrategyKind::TrainShallowFreezeDeep => "train-shallow/freeze-deep",
            StrategyKind::FreezeShallowTrainDeep => "freeze-shallow/train-deep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Layers `1..=round(r * N)` form the shallow group.
    pub split: Fraction,
    /// Overrides for embeddings and head; by default they follow the
    /// shallow group.
    pub embeddings_trainable: Option<bool>,
    pub head_trainable: Option<bool>,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            split: Fraction::new(1, 2).expect("1/2"),
            embeddings_trainable: None,
            head_trainable: None,
        }
    }

    pub fn freeze_plan(&self, n_layers: usize) -> FreezePlan {
        let b = self.split.split_layer(n_layers);
        let mut plan = match self.kind {
            StrategyKind::FullParameter => FreezePlan::all_trainable(n_layers),
            StrategyKind::TrainShallowFreezeDeep => FreezePlan::split(n_layers, b, true, false),
            StrategyKind::FreezeShallowTrainDeep => FreezePlan::split(n_layers, b, false, true),
        };
        if let Some(e) = self.embeddings_trainable {
            plan.embeddings_trainable = e;
        }
        if let Some(h) = self.head_trainable {
            plan.lm_head_trainable = h;
        }
        plan
    }
}

/// Continued pre-training of `model` under `strategy`.
pub fn continued_pretrain(
    model: &mut Model,
    corpus: &TokenCorpus,
    strategy: &Strategy,
    config: &TrainConfig,
    evals: &[&TokenCorpus],
) -> Result<RunRecord> {
    model.apply_freeze_plan(&strategy.freeze_plan(model.n_layers()))?;
    train(model, corpus, config, strategy.kind.label(), evals)
}

#[cfg(test)]
mod tests;
