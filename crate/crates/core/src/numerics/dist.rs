use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(probs) == 1` for distributions built in-process.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// A discrete distribution over a sorted, duplicate-free set of token ids.
///
/// Dense distributions use the support `0..vocab`; truncated ones carry an
/// explicit subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    support: Vec<usize>,
    probs: Vec<f64>,
}

impl ProbabilityDistribution {
    pub fn new(support: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::invalid(format!(
                "support has {} ids but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("support ids must be strictly ascending"));
        }
        validate_probs(&probs)?;
        Ok(Self { support, probs })
    }

    pub fn dense(probs: Vec<f64>) -> Result<Self> {
        let support = (0..probs.len()).collect();
        Self::new(support, probs)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty distribution"));
        }
        Self::dense(vec![1.0 / n as f64; n])
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_dense(&self) -> bool {
        self.support.last() == Some(&(self.support.len() - 1))
    }

    /// Probability of `id`, zero when the id is outside the support.
    pub fn prob(&self, id: usize) -> f64 {
        if self.is_dense() {
            return self.probs.get(id).copied().unwrap_or(0.0);
        }
        self.support
            .binary_search(&id)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    /// Highest-probability id, lowest id on ties.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        (self.support[best], self.probs[best])
    }

    /// The `k` most probable ids ordered by descending probability, ties by
    /// ascending id.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .total_cmp(&self.probs[a])
                .then(self.support[a].cmp(&self.support[b]))
        });
        idx.truncate(k);
        idx.into_iter()
            .map(|i| (self.support[i], self.probs[i]))
            .collect()
    }
}

fn validate_probs(probs: &[f64]) -> Result<()> {
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::invalid(format!("invalid probability {bad}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Numerically stable softmax over the whole vector.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityDistribution> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of empty logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let mut probs = vec![0.0; logits.len()];
    softmax_into(logits, &mut probs);
    ProbabilityDistribution::dense(probs)
}

/// Max-subtracted softmax written into `out`. No validation.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
