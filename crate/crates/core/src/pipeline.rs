//! Per-sample diagnosis (target curve, JS curve, Ratio, ΔJS) and its
//! aggregation into heatmaps, layer profiles and a boundary scan.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    group_heatmap, js_divergence, layer_profile, normalize_profile, scan_boundaries, sensitivity, task_particle,
    BoundaryScan, Fraction, HeatmapMatrix, Normalization, SensitivityProfile, TaskParticleProfile, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::lens::{aligned_support, restrict, select_target, truncate_top_k, LensNorm, TargetToken};
use crate::model::Model;
use crate::numerics::ProbabilityDistribution;
use crate::perturb::mask_context;
use crate::prompt::{group_ids, TokenizedSample};
use crate::trace_io::{capture_trace, CaptureOptions, ExternalTrace, StoredDistribution, FORMAT_VERSION};

/// Default K of the aligned top-K support.
pub const DEFAULT_TOP_K: usize = 10;

/// Which vocabulary entries enter `P_t(l)` and `JS(l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SupportMode {
    /// Whole vocabulary.
    #[default]
    Full,
    /// Union of the two distributions' top-K ids, renormalized.
    TopK { k: usize },
}

impl fmt::Display for SupportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupportMode::Full => f.write_str("full"),
            SupportMode::TopK { k } => write!(f, "top-{k}"),
        }
    }
}

impl FromStr for SupportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(SupportMode::Full);
        }
        s.strip_prefix("top-")
            .and_then(|k| k.parse().ok())
            .filter(|k| *k > 0)
            .map(|k| SupportMode::TopK { k })
            .ok_or_else(|| Error::invalid(format!("support must be full or top-<K>, got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseConfig {
    pub epsilon: f64,
    pub tau: f64,
    pub lens_norm: LensNorm,
    pub support: SupportMode,
    pub normalization: Normalization,
    pub fractions: Vec<Fraction>,
    pub n_groups: usize,
    /// Worker threads for per-sample work; output does not depend on it.
    pub jobs: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            tau: 0.0,
            lens_norm: LensNorm::Final,
            support: SupportMode::Full,
            normalization: Normalization::MinMax,
            fractions: Fraction::defaults(),
            n_groups: 10,
            jobs: 1,
        }
    }
}

impl DiagnoseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !self.tau.is_finite() {
            return Err(Error::InvalidConfig("tau must be finite".into()));
        }
        if self.support == (SupportMode::TopK { k: 0 }) {
            return Err(Error::InvalidConfig("top-k must be at least 1".into()));
        }
        if self.n_groups == 0 || self.jobs == 0 {
            return Err(Error::InvalidConfig("groups and jobs must be at least 1".into()));
        }
        if self.fractions.is_empty() {
            return Err(Error::InvalidConfig("need at least one split fraction".into()));
        }
        Ok(())
    }
}

/// Curves and metrics of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnosis {
    pub index: usize,
    pub group_id: usize,
    pub target: TargetToken,
    /// `P_t(1..=N)`.
    pub target_probs: Vec<f64>,
    pub task_particle: TaskParticleProfile,
    pub sensitivity: SensitivityProfile,
}

/// Settings that, together with the inputs, determine every number in a
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub format_version: u32,
    pub source: String,
    pub seed: Option<u64>,
    pub n_layers: usize,
    pub n_samples: usize,
    pub n_groups: usize,
    pub epsilon: f64,
    pub tau: f64,
    pub lens_norm: LensNorm,
    pub support: SupportMode,
    pub normalization: Normalization,
    pub fractions: Vec<Fraction>,
}

/// A heatmap with its display-scaled copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapReport {
    pub groups: Vec<usize>,
    pub layers: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub log1p_values: Vec<Vec<f64>>,
}

impl From<HeatmapMatrix> for HeatmapReport {
    fn from(m: HeatmapMatrix) -> Self {
        Self {
            log1p_values: m.log1p_values(),
            groups: m.groups,
            layers: m.layers,
            values: m.values,
        }
    }
}

impl HeatmapReport {
    pub fn shape(&self) -> (usize, usize) {
        (self.groups.len(), self.layers.len())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// One row of the boundary scan table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub ratio: Fraction,
    pub ratio_value: f64,
    pub split_layer: usize,
    pub score: f64,
}

pub fn scan_rows(scan: &BoundaryScan) -> Vec<ScanRow> {
    scan.rows()
        .map(|(ratio, split_layer, score)| ScanRow {
            ratio,
            ratio_value: ratio.value(),
            split_layer,
            score,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub metadata: ReportMetadata,
    pub samples: Vec<SampleDiagnosis>,
    /// Group means of `Ratio(2..=N)`.
    pub ratio_heatmap: HeatmapReport,
    /// Group means of `ΔJS(2..=N)`.
    pub delta_js_heatmap: HeatmapReport,
    /// Sample-mean Ratio per layer `1..=N`, layer 1 fixed at 0.
    pub tp_profile: Vec<f64>,
    /// Sample-mean ΔJS per layer `1..=N`, layer 1 fixed at 0.
    pub ls_profile: Vec<f64>,
    pub tp_degenerate: bool,
    pub ls_degenerate: bool,
    pub scan: BoundaryScan,
    pub scan_table: Vec<ScanRow>,
}

/// Normalizes both layer profiles and scores every fraction.
pub fn scan_profiles(
    tp_profile: &[f64],
    ls_profile: &[f64],
    normalization: Normalization,
    fractions: &[Fraction],
) -> Result<(BoundaryScan, bool, bool)> {
    if tp_profile.len() != ls_profile.len() || tp_profile.len() < 2 {
        return Err(Error::invalid("TP and LS profiles need equal length of at least 2"));
    }
    let tp = normalize_profile(tp_profile, normalization)?;
    let ls = normalize_profile(ls_profile, normalization)?;
    let scan = scan_boundaries(&tp.values, &ls.values, fractions)?;
    Ok((scan, tp.degenerate, ls.degenerate))
}

impl DiagnosticReport {
    /// Aggregates per-sample diagnoses; `samples` must all have 1-based
    /// group labels within `config.n_groups`.
    pub fn build(samples: Vec<SampleDiagnosis>, config: &DiagnoseConfig, source: &str, seed: Option<u64>) -> Result<Self> {
        config.validate()?;
        let first = samples.first().ok_or_else(|| Error::invalid("no samples to report"))?;
        let n_layers = first.target_probs.len();
        if n_layers < 2 {
            return Err(Error::invalid("diagnostics need at least two layers"));
        }
        let ratios: Vec<Vec<f64>> = samples.iter().map(|s| s.task_particle.ratios.clone()).collect();
        let deltas: Vec<Vec<f64>> = samples.iter().map(|s| s.sensitivity.delta_js.clone()).collect();
        let groups: Vec<usize> = samples.iter().map(|s| s.group_id).collect();
        let ratio_heatmap = group_heatmap(&ratios, &groups, config.n_groups, 2)?;
        let delta_js_heatmap = group_heatmap(&deltas, &groups, config.n_groups, 2)?;
        let tp_profile = layer_profile(&ratios)?;
        let ls_profile = layer_profile(&deltas)?;
        let (scan, tp_degenerate, ls_degenerate) =
            scan_profiles(&tp_profile, &ls_profile, config.normalization, &config.fractions)?;
        Ok(Self {
            metadata: ReportMetadata {
                format_version: FORMAT_VERSION,
                source: source.to_string(),
                seed,
                n_layers,
                n_samples: samples.len(),
                n_groups: config.n_groups,
                epsilon: config.epsilon,
                tau: config.tau,
                lens_norm: config.lens_norm,
                support: config.support,
                normalization: config.normalization,
                fractions: config.fractions.clone(),
            },
            samples,
            ratio_heatmap: ratio_heatmap.into(),
            delta_js_heatmap: delta_js_heatmap.into(),
            tp_profile,
            ls_profile,
            tp_degenerate,
            ls_degenerate,
            scan_table: scan_rows(&scan),
            scan,
        })
    }

    /// The scan recomputed from the stored layer profiles.
    pub fn rescan(&self, fractions: &[Fraction], normalization: Normalization) -> Result<BoundaryScan> {
        Ok(scan_profiles(&self.tp_profile, &self.ls_profile, normalization, fractions)?.0)
    }
}

/// `(target, P_t(1..=N), JS(1..=N))` from `P`, the layer readouts and the
/// perturbed outputs, under the chosen support.
fn curves(
    final_dist: &ProbabilityDistribution,
    layers: &[StoredDistribution],
    perturbed: &[StoredDistribution],
    support: SupportMode,
) -> Result<(TargetToken, Vec<f64>, Vec<f64>)> {
    let target = select_target(final_dist);
    let t = target.token_id;
    let dense = |d: &StoredDistribution| -> Result<ProbabilityDistribution> {
        d.as_dense()
            .cloned()
            .ok_or_else(|| Error::invalid("full-vocabulary support needs dense distributions; use a top-K support"))
    };
    let (target_probs, js) = match support {
        SupportMode::Full => {
            let pt = layers.iter().map(|d| Ok(dense(d)?.prob(t))).collect::<Result<Vec<_>>>()?;
            let js = perturbed
                .iter()
                .map(|q| js_divergence(final_dist, &dense(q)?))
                .collect::<Result<Vec<_>>>()?;
            (pt, js)
        }
        SupportMode::TopK { k } => {
            let pt = layers
                .iter()
                .map(|d| Ok(restrict(d, &aligned_support(d, final_dist, k)?)?.prob(t)))
                .collect::<Result<Vec<_>>>()?;
            let js = perturbed
                .iter()
                .map(|q| {
                    let (tp, tq) = truncate_top_k(final_dist, q, k)?;
                    js_divergence(&tp.dist, &tq.dist)
                })
                .collect::<Result<Vec<_>>>()?;
            (pt, js)
        }
    };
    Ok((target, target_probs, js))
}

fn diagnosis(
    index: usize,
    group_id: usize,
    (target, target_probs, js): (TargetToken, Vec<f64>, Vec<f64>),
    config: &DiagnoseConfig,
) -> Result<SampleDiagnosis> {
    Ok(SampleDiagnosis {
        index,
        group_id,
        target,
        task_particle: task_particle(&target_probs, config.epsilon, config.tau)?,
        sensitivity: sensitivity(&js, config.epsilon)?,
        target_probs,
    })
}

/// Full-mode diagnosis of one sample on the embedded model: one intact
/// pass, `N` projections and `N` perturbed resumptions.
pub fn diagnose_sample(model: &Model, sample: &TokenizedSample, index: usize, config: &DiagnoseConfig) -> Result<SampleDiagnosis> {
    if sample.context_indices.is_empty() {
        return Err(Error::invalid(format!("sample {index} has no context tokens to mask")));
    }
    let options = CaptureOptions {
        hidden_states: false,
        ..CaptureOptions::default()
    };
    let trace = capture_trace(model, sample, config.lens_norm, options)?;
    let layers = trace.layer_distributions.as_deref().unwrap_or_default();
    let perturbed = trace.perturbed_distributions.as_deref().unwrap_or_default();
    let c = curves(&trace.final_distribution, layers, perturbed, config.support)?;
    diagnosis(index, sample.group_id, c, config)
}

fn check_model_matches(model: &Model, trace: &ExternalTrace) -> Result<()> {
    let (cfg, m) = (model.config(), &trace.manifest);
    if cfg.n_layers != m.n_layers || cfg.d_model != m.d_model || cfg.vocab_size != m.vocab_size {
        return Err(Error::invalid(format!(
            "model (N={}, d={}, vocab={}) does not match trace (N={}, d={}, vocab={})",
            cfg.n_layers, cfg.d_model, cfg.vocab_size, m.n_layers, m.d_model, m.vocab_size
        )));
    }
    Ok(())
}

/// Diagnosis of a stored trace. Stored distributions are used as is; a
/// missing kind is recomputed from the hidden states when `model` is given.
pub fn diagnose_trace(
    trace: &ExternalTrace,
    model: Option<&Model>,
    index: usize,
    group_id: usize,
    config: &DiagnoseConfig,
) -> Result<SampleDiagnosis> {
    let m = &trace.manifest;
    if m.context_indices.is_empty() {
        return Err(Error::invalid(format!("trace {index} has no context tokens")));
    }
    if let (SupportMode::TopK { k }, Some(stored)) = (config.support, m.top_k) {
        if k > stored {
            return Err(Error::invalid(format!("trace stores top-{stored} supports, cannot evaluate top-{k}")));
        }
    }
    let runnable = || -> Result<(&Model, &Vec<crate::numerics::Tensor>)> {
        let model = model.ok_or_else(|| {
            Error::invalid("trace lacks stored distributions and no checkpoint was given to recompute them")
        })?;
        let hidden = trace
            .hidden_states
            .as_ref()
            .ok_or_else(|| Error::invalid("trace has neither the distributions nor hidden states to recompute them"))?;
        check_model_matches(model, trace)?;
        Ok((model, hidden))
    };
    let layers = match &trace.layer_distributions {
        Some(stored) => stored.clone(),
        None => {
            let (model, hidden) = runnable()?;
            hidden
                .iter()
                .map(|h| Ok(StoredDistribution::Dense(model.project_last(h, m.lens_norm.applies_norm())?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let perturbed = match &trace.perturbed_distributions {
        Some(stored) => stored.clone(),
        None => {
            let (model, hidden) = runnable()?;
            hidden
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let masked = mask_context(h, &m.context_indices)?;
                    Ok(StoredDistribution::Dense(model.forward_from_layer(&masked, i + 1)?))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let c = curves(&trace.final_distribution, &layers, &perturbed, config.support)?;
    diagnosis(index, group_id, c, config)
}

fn with_jobs<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(work))
}

/// Diagnoses every sample (in parallel over `config.jobs` threads) and
/// aggregates in sample order.
pub fn diagnose_model(
    model: &Model,
    samples: &[TokenizedSample],
    config: &DiagnoseConfig,
    seed: Option<u64>,
) -> Result<DiagnosticReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples to diagnose"));
    }
    let diagnoses = with_jobs(config.jobs, || {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| diagnose_sample(model, s, i, config))
            .collect::<Result<Vec<_>>>()
    })??;
    DiagnosticReport::build(diagnoses, config, &format!("toy model {}", model.config().layout_string()), seed)
}

/// Diagnoses stored traces. Traces without a group label are assigned
/// groups by position, in equal consecutive blocks. The lens-norm setting
/// recorded in the traces is reported.
pub fn diagnose_traces(
    traces: &[ExternalTrace],
    model: Option<&Model>,
    config: &DiagnoseConfig,
) -> Result<DiagnosticReport> {
    config.validate()?;
    let first = traces.first().ok_or_else(|| Error::invalid("no traces to diagnose"))?;
    let lens_norm = first.manifest.lens_norm;
    if traces.iter().any(|t| t.manifest.lens_norm != lens_norm) {
        return Err(Error::invalid("traces disagree on lens_norm"));
    }
    let groups = if traces.iter().all(|t| t.manifest.group_id.is_some()) {
        traces.iter().map(|t| t.manifest.group_id.unwrap_or_default()).collect()
    } else {
        group_ids(traces.len(), config.n_groups)?
    };
    let config = DiagnoseConfig {
        lens_norm,
        ..config.clone()
    };
    let diagnoses = with_jobs(config.jobs, || {
        traces
            .par_iter()
            .zip(&groups)
            .enumerate()
            .map(|(i, (t, &g))| diagnose_trace(t, model, i, g, &config))
            .collect::<Result<Vec<_>>>()
    })??;
    DiagnosticReport::build(diagnoses, &config, "trace directories", None)
}
