use serde::{Deserialize, Serialize};

use super::{train, RunRecord, TokenCorpus, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{BlockKind, FreezePlan, Model};

/// Where the pretrained full-attention blocks go in a half-and-half hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Fresh linear-attention blocks in the shallow half (trained), donor
    /// blocks in the deep half (frozen).
    DonorDeep,
    /// Donor blocks in the shallow half, fresh linear-attention blocks in
    /// the deep half; both trained.
    DonorShallow,
}

impl Placement {
    pub const BOTH: [Placement; 2] = [Placement::DonorDeep, Placement::DonorShallow];

    pub fn label(self) -> &'static str {
        match self {
            Placement::DonorDeep => "LA-shallow(train)+FA-deep(frozen)",
            Placement::DonorShallow => "FA-shallow(train)+LA-deep(train)",
        }
    }
}

/// Builds the hybrid for `placement` from a pure full-attention `donor` and
/// returns it with its freeze plan applied. Layers `1..=N/2` form the
/// shallow half; embeddings and head are copied from the donor.
pub fn build_hybrid(donor: &Model, placement: Placement, seed: u64) -> Result<Model> {
    let cfg = donor.config();
    if cfg.block_layout.iter().any(|k| *k != BlockKind::FullAttention) {
        return Err(Error::InvalidConfig("hybrid donor must be a pure full-attention model".into()));
    }
    let n = cfg.n_layers;
    if n < 2 {
        return Err(Error::InvalidConfig("hybrid placement needs at least two layers".into()));
    }
    let half = n / 2;
    let donor_deep = placement == Placement::DonorDeep;
    let layout: Vec<BlockKind> = (0..n)
        .map(|l| match (l < half, donor_deep) {
            (true, true) | (false, false) => BlockKind::LinearAttention,
            _ => BlockKind::FullAttention,
        })
        .collect();
    let mut model = Model::new(cfg.clone().with_layout(layout), seed)?;
    model.copy_embeddings_and_head_from(donor)?;
    let donor_layers = if donor_deep { half..n } else { 0..half };
    for l in donor_layers {
        model.copy_block_from(donor, l, l)?;
    }
    let plan = if donor_deep {
        FreezePlan::split(n, half, true, false)
    } else {
        FreezePlan::all_trainable(n)
    };
    model.apply_freeze_plan(&plan)?;
    Ok(model)
}

/// Trains both placements with the same seed, corpus and config.
pub fn hybrid_placement_run(
    donor: &Model,
    corpus: &TokenCorpus,
    config: &TrainConfig,
    evals: &[&TokenCorpus],
) -> Result<Vec<(Model, RunRecord)>> {
    Placement::BOTH
        .iter()
        .map(|&p| {
            let mut model = build_hybrid(donor, p, config.seed)?;
            let record = train(&mut model, corpus, config, p.label(), evals)?;
            Ok((model, record))
        })
        .collect()
}
