use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ProbabilityDistribution;

/// Default stabilizer in the ratio denominators.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskParticleProfile {
    /// `Ratio(l)` for `l = 2..=N`.
    pub ratios: Vec<f64>,
    pub epsilon: f64,
    pub threshold: f64,
    /// 1-based layers with `Ratio(l) > threshold`.
    pub interval: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    /// `JS(l)` for `l = 1..=N`.
    pub js: Vec<f64>,
    /// `ΔJS(l)` for `l = 2..=N`.
    pub delta_js: Vec<f64>,
    pub epsilon: f64,
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    Ok(())
}

/// `|(p[l] - p[l-1]) / (p[l] + ε)|` for consecutive target probabilities.
pub fn task_particle(target_probs: &[f64], epsilon: f64, threshold: f64) -> Result<TaskParticleProfile> {
    check_epsilon(epsilon)?;
    if target_probs.is_empty() {
        return Err(Error::invalid("empty target-probability curve"));
    }
    if let Some(p) = target_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("target probability {p} outside [0, 1]")));
    }
    let ratios: Vec<f64> = target_probs
        .windows(2)
        .map(|w| ((w[1] - w[0]) / (w[1] + epsilon)).abs())
        .collect();
    let interval = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > threshold)
        .map(|(i, _)| i + 2)
        .collect();
    Ok(TaskParticleProfile {
        ratios,
        epsilon,
        threshold,
        interval,
    })
}

/// `|(js[l] - js[l-1]) / (js[l-1] + ε)|` for consecutive layers.
pub fn sensitivity(js: &[f64], epsilon: f64) -> Result<SensitivityProfile> {
    check_epsilon(epsilon)?;
    if js.is_empty() {
        return Err(Error::invalid("empty JS curve"));
    }
    if let Some(v) = js.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!("JS value {v} is negative or non-finite")));
    }
    let delta_js = js
        .windows(2)
        .map(|w| ((w[1] - w[0]) / (w[0] + epsilon)).abs())
        .collect();
    Ok(SensitivityProfile {
        js: js.to_vec(),
        delta_js,
        epsilon,
    })
}

/// `p ln(p / m)` with `0 ln 0 = 0`.
fn plogp(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).ln()
    } else {
        0.0
    }
}

/// Kullback-Leibler divergence in nats over a shared support.
pub fn kl_divergence(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        if a > 0.0 && b == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += plogp(a, b);
    }
    Ok(total.max(0.0))
}

/// Jensen-Shannon divergence in nats, `½KL(P‖M) + ½KL(Q‖M)` with
/// `M = ½(P + Q)`. Exactly symmetric, and exactly zero when `P == Q`.
pub fn js_divergence(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        // Each element's contribution is nonnegative by the log-sum inequality.
        total += (0.5 * (plogp(a, m) + plogp(b, m))).max(0.0);
    }
    Ok(total.min(LN_2))
}

fn same_support(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<()> {
    if p.support() != q.support() {
        return Err(Error::invalid(format!(
            "distributions have different supports ({} vs {} ids)",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}
