//! Logit-lens projection of intermediate residual states, target-token
//! selection, and top-K support alignment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HiddenStateTrace, Model};
use crate::numerics::ProbabilityDistribution;

/// Whether the final RMSNorm is applied before the shared LM head when
/// reading an intermediate layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensNorm {
    #[default]
    Final,
    None,
}

impl LensNorm {
    pub fn applies_norm(self) -> bool {
        self == LensNorm::Final
    }
}

impl fmt::Display for LensNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LensNorm::Final => "final",
            LensNorm::None => "none",
        })
    }
}

impl FromStr for LensNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(LensNorm::Final),
            "none" => Ok(LensNorm::None),
            _ => Err(Error::invalid(format!("lens norm must be final or none, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDistribution {
    pub layer: usize,
    pub dist: ProbabilityDistribution,
    /// Probability of the target token at this layer.
    pub target_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetToken {
    pub token_id: usize,
    pub prob_final: f64,
}

/// A distribution restricted to an aligned support and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDistribution {
    pub dist: ProbabilityDistribution,
    pub k: usize,
}

/// Probability mass over an ascending list of token ids. The masses need not
/// sum to one: sparse traces keep only the aligned candidates.
pub trait ProbabilityMass {
    fn ids(&self) -> &[usize];
    fn masses(&self) -> &[f64];

    fn mass_of(&self, id: usize) -> Option<f64> {
        self.ids().binary_search(&id).ok().map(|i| self.masses()[i])
    }

    /// The `k` heaviest ids, descending by mass with ties to the lower id.
    fn top_ids(&self, k: usize) -> Vec<usize> {
        let (ids, m) = (self.ids(), self.masses());
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| m[b].total_cmp(&m[a]).then(ids[a].cmp(&ids[b])));
        order.truncate(k);
        order.into_iter().map(|i| ids[i]).collect()
    }
}

impl ProbabilityMass for ProbabilityDistribution {
    fn ids(&self) -> &[usize] {
        self.support()
    }

    fn masses(&self) -> &[f64] {
        self.probs()
    }

    fn mass_of(&self, id: usize) -> Option<f64> {
        if self.is_dense() {
            return self.probs().get(id).copied();
        }
        self.support().binary_search(&id).ok().map(|i| self.probs()[i])
    }
}

/// Raw probabilities of a subset of the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMass {
    ids: Vec<usize>,
    masses: Vec<f64>,
}

impl SparseMass {
    pub fn new(ids: Vec<usize>, masses: Vec<f64>) -> Result<Self> {
        if ids.len() != masses.len() || ids.is_empty() {
            return Err(Error::invalid("sparse distribution needs matching nonempty ids and masses"));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sparse ids must be strictly ascending"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("sparse masses must be finite and nonnegative"));
        }
        if masses.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::invalid("sparse masses exceed one"));
        }
        Ok(Self { ids, masses })
    }

    /// Keeps the entries of `dist` at `ids` (ascending) without renormalizing.
    pub fn keep(dist: &ProbabilityDistribution, ids: &[usize]) -> Result<Self> {
        let masses = ids
            .iter()
            .map(|&id| dist.mass_of(id).ok_or_else(|| missing(id)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids.to_vec(), masses)
    }
}

impl ProbabilityMass for SparseMass {
    fn ids(&self) -> &[usize] {
        &self.ids
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn missing(id: usize) -> Error {
    Error::invalid(format!("token {id} is outside the stored support"))
}

/// Logit-lens readout of layer `l` (1-based) at the last position.
pub fn project_layer(model: &Model, trace: &HiddenStateTrace, l: usize, norm: LensNorm) -> Result<LayerDistribution> {
    let hidden = trace.hidden(l)?;
    let dist = model.project_last(hidden, norm.applies_norm())?;
    let target = select_target(&trace.final_distribution);
    Ok(LayerDistribution {
        layer: l,
        target_prob: dist.prob(target.token_id),
        dist,
    })
}

/// Projections of every layer, `1..=N`.
pub fn project_all(model: &Model, trace: &HiddenStateTrace, norm: LensNorm) -> Result<Vec<LayerDistribution>> {
    (1..=trace.n_layers())
        .map(|l| project_layer(model, trace, l, norm))
        .collect()
}

/// Argmax of the final distribution, lowest id on ties.
pub fn select_target(final_dist: &ProbabilityDistribution) -> TargetToken {
    let (token_id, prob_final) = final_dist.argmax();
    TargetToken { token_id, prob_final }
}

/// Sorted union of two id lists.
pub fn union_ids(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut ids: Vec<usize> = a.iter().chain(b).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Restricts `dist` to `ids` (ascending) and renormalizes, summing in id
/// order.
pub fn restrict(dist: &impl ProbabilityMass, ids: &[usize]) -> Result<ProbabilityDistribution> {
    let masses = ids
        .iter()
        .map(|&id| dist.mass_of(id).ok_or_else(|| missing(id)))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("no probability mass on the aligned support"));
    }
    ProbabilityDistribution::new(ids.to_vec(), masses.iter().map(|m| m / total).collect())
}

/// The union of the top-`k` ids of `p` and `q`, with `k` clamped to the
/// smaller support.
pub fn aligned_support(p: &impl ProbabilityMass, q: &impl ProbabilityMass, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("top-k must be at least 1"));
    }
    let k = k.min(p.ids().len()).min(q.ids().len());
    Ok(union_ids(&p.top_ids(k), &q.top_ids(k)))
}

/// Both distributions restricted to the union of their top-`k` ids and
/// renormalized over that shared support.
pub fn truncate_top_k(
    p: &impl ProbabilityMass,
    q: &impl ProbabilityMass,
    k: usize,
) -> Result<(TruncatedDistribution, TruncatedDistribution)> {
    let ids = aligned_support(p, q, k)?;
    let k = k.min(p.ids().len()).min(q.ids().len());
    Ok((
        TruncatedDistribution { dist: restrict(p, &ids)?, k },
        TruncatedDistribution { dist: restrict(q, &ids)?, k },
    ))
}
