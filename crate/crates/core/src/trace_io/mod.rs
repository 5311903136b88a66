//! On-disk trace directories shared with external exporters, and report
//! emission.
//!
//! A trace directory holds `manifest.json` plus raw little-endian f64 blobs.
//! The byte layout is documented in `docs/trace-format.md`.

mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lens::{project_all, union_ids, LensNorm, ProbabilityMass, SparseMass};
use crate::model::Model;
use crate::numerics::tensor::{f64s_from_le_bytes, f64s_to_le_bytes};
use crate::numerics::{ProbabilityDistribution, Tensor};
use crate::perturb::perturb_all;
use crate::prompt::TokenizedSample;

pub use report::{
    emit_report, heatmap_csv, read_report, report_json, scan_csv, ReportFormat, DELTA_JS_CSV, RATIO_CSV, REPORT_JSON, SCAN_CSV,
};

/// Newest manifest version this build reads and the one it writes.
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_DIST_FILE: &str = "final_dist.f64";
/// Tolerance on the mass of externally produced distributions.
pub const EXTERNAL_SUM_TOLERANCE: f64 = 1e-6;

pub fn hidden_file(layer: usize) -> String {
    format!("hidden_{layer}.f64")
}

pub fn layer_dist_file(layer: usize) -> String {
    format!("layer_dist_{layer}.f64")
}

pub fn q_dist_file(layer: usize) -> String {
    format!("q_dist_{layer}.f64")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub format_version: u32,
    pub n_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub token_ids: Vec<usize>,
    pub context_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
    pub has_hidden_states: bool,
    pub has_layer_distributions: bool,
    pub has_perturbed_distributions: bool,
    /// Set when per-layer distributions are stored sparse.
    pub top_k: Option<usize>,
    pub endianness: String,
    /// Whether the final norm was applied before the head when the layer
    /// distributions were produced.
    #[serde(default)]
    pub lens_norm: LensNorm,
    /// Optional 1-based group label for heatmap rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<usize>,
}

impl TraceManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version > FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        if self.format_version == 0 {
            return Err(Error::invalid("format_version must be at least 1"));
        }
        if self.endianness != "little" {
            return Err(Error::invalid(format!("endianness must be \"little\", got {:?}", self.endianness)));
        }
        if self.n_layers == 0 || self.vocab_size == 0 || self.seq_len == 0 {
            return Err(Error::invalid("n_layers, vocab_size and seq_len must be positive"));
        }
        if self.has_hidden_states && self.d_model == 0 {
            return Err(Error::invalid("hidden states need a positive d_model"));
        }
        if self.token_ids.len() != self.seq_len {
            return Err(Error::invalid(format!(
                "{} token ids for seq_len {}",
                self.token_ids.len(),
                self.seq_len
            )));
        }
        if let Some(t) = self.token_ids.iter().find(|t| **t >= self.vocab_size) {
            return Err(Error::invalid(format!("token id {t} outside vocabulary of {}", self.vocab_size)));
        }
        check_partition(&self.context_indices, &self.query_indices, self.seq_len)?;
        if !(self.has_hidden_states || self.has_layer_distributions || self.has_perturbed_distributions) {
            return Err(Error::invalid("trace stores neither hidden states nor distributions"));
        }
        if self.top_k == Some(0) {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if self.group_id == Some(0) {
            return Err(Error::invalid("group_id is 1-based"));
        }
        Ok(())
    }

    /// Canonical JSON: sorted keys, shortest round-trip numbers, newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self, "trace manifest")
    }
}

fn check_partition(context: &[usize], query: &[usize], seq_len: usize) -> Result<()> {
    for (name, set) in [("context", context), ("query", query)] {
        if set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("{name} indices must be strictly ascending")));
        }
    }
    let mut seen = vec![false; seq_len];
    for &i in context.iter().chain(query) {
        if i >= seq_len {
            return Err(Error::invalid(format!("index {i} outside 0..{seq_len}")));
        }
        if seen[i] {
            return Err(Error::invalid(format!("index {i} is in both context and query sets")));
        }
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("position {i} is in neither index set")));
    }
    Ok(())
}

/// Serializes through `serde_json::Value`, whose maps keep keys sorted.
pub(crate) fn canonical_json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    let json_err = |source| Error::Json {
        context: what.to_string(),
        source,
    };
    let tree = serde_json::to_value(value).map_err(json_err)?;
    Ok(serde_json::to_string_pretty(&tree).map_err(json_err)? + "\n")
}

/// A per-layer distribution as stored: the full vocabulary, or raw
/// (unrenormalized) masses on a subset of ids.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredDistribution {
    Dense(ProbabilityDistribution),
    Sparse(SparseMass),
}

impl StoredDistribution {
    pub fn as_dense(&self) -> Option<&ProbabilityDistribution> {
        match self {
            StoredDistribution::Dense(d) => Some(d),
            StoredDistribution::Sparse(_) => None,
        }
    }

    /// Keeps the union of the top-`k` ids of `dist` and of `reference`.
    pub fn sparse_top_k(dist: &ProbabilityDistribution, reference: &ProbabilityDistribution, k: usize) -> Result<Self> {
        let ids = union_ids(&dist.top_ids(k), &reference.top_ids(k));
        Ok(StoredDistribution::Sparse(SparseMass::keep(dist, &ids)?))
    }

    fn to_blob(&self) -> Vec<u8> {
        match self {
            StoredDistribution::Dense(d) => f64s_to_le_bytes(d.probs()),
            StoredDistribution::Sparse(s) => {
                let values: Vec<f64> = s.ids().iter().map(|&i| i as f64).chain(s.masses().iter().copied()).collect();
                f64s_to_le_bytes(&values)
            }
        }
    }
}

impl ProbabilityMass for StoredDistribution {
    fn ids(&self) -> &[usize] {
        match self {
            StoredDistribution::Dense(d) => d.ids(),
            StoredDistribution::Sparse(s) => s.ids(),
        }
    }

    fn masses(&self) -> &[f64] {
        match self {
            StoredDistribution::Dense(d) => d.masses(),
            StoredDistribution::Sparse(s) => s.masses(),
        }
    }

    fn mass_of(&self, id: usize) -> Option<f64> {
        match self {
            StoredDistribution::Dense(d) => d.mass_of(id),
            StoredDistribution::Sparse(s) => s.mass_of(id),
        }
    }
}

/// Everything a trace directory can hold for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalTrace {
    pub manifest: TraceManifest,
    /// `h_1..=h_N`, each `[seq_len, d_model]`.
    pub hidden_states: Option<Vec<Tensor>>,
    /// `P`, always dense.
    pub final_distribution: ProbabilityDistribution,
    /// Logit-lens readouts of layers `1..=N`.
    pub layer_distributions: Option<Vec<StoredDistribution>>,
    /// `Q(1)..=Q(N)`.
    pub perturbed_distributions: Option<Vec<StoredDistribution>>,
}

impl ExternalTrace {
    pub fn n_layers(&self) -> usize {
        self.manifest.n_layers
    }

    /// Checks that the stored arrays agree with the manifest.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate()?;
        if m.has_hidden_states != self.hidden_states.is_some()
            || m.has_layer_distributions != self.layer_distributions.is_some()
            || m.has_perturbed_distributions != self.perturbed_distributions.is_some()
        {
            return Err(Error::invalid("manifest flags disagree with the stored arrays"));
        }
        if self.final_distribution.len() != m.vocab_size || !self.final_distribution.is_dense() {
            return Err(Error::invalid("final distribution must be dense over the vocabulary"));
        }
        if let Some(hidden) = &self.hidden_states {
            if hidden.len() != m.n_layers || hidden.iter().any(|h| h.shape() != [m.seq_len, m.d_model]) {
                return Err(Error::invalid("hidden states must be n_layers tensors of [seq_len, d_model]"));
            }
        }
        for dists in [&self.layer_distributions, &self.perturbed_distributions].into_iter().flatten() {
            if dists.len() != m.n_layers {
                return Err(Error::invalid("need one stored distribution per layer"));
            }
            for d in dists {
                match (d, m.top_k) {
                    (StoredDistribution::Dense(p), None) if p.len() == m.vocab_size => {}
                    (StoredDistribution::Sparse(s), Some(_)) if s.ids().last().is_some_and(|&i| i < m.vocab_size) => {}
                    _ => return Err(Error::invalid("stored distributions disagree with vocab_size or top_k")),
                }
            }
        }
        Ok(())
    }
}

/// What `capture_trace` records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureOptions {
    pub hidden_states: bool,
    pub layer_distributions: bool,
    pub perturbed_distributions: bool,
    /// Store distributions top-K sparse instead of dense.
    pub top_k: Option<usize>,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        Self {
            hidden_states: true,
            layer_distributions: true,
            perturbed_distributions: true,
            top_k: None,
        }
    }
}

/// Runs the toy model on `sample` and packages the requested artifacts in
/// trace form. Sparse layer distributions keep the union of their own and
/// `P`'s top-K ids; sparse `Q(l)` likewise.
pub fn capture_trace(
    model: &Model,
    sample: &TokenizedSample,
    lens_norm: LensNorm,
    options: CaptureOptions,
) -> Result<ExternalTrace> {
    let cfg = model.config();
    let (trace, outcomes) = if options.perturbed_distributions {
        perturb_all(model, &sample.token_ids, &sample.context_indices)?
    } else {
        (model.forward_with_trace(&sample.token_ids)?, Vec::new())
    };
    let p = &trace.final_distribution;
    let store = |d: ProbabilityDistribution| match options.top_k {
        Some(k) => StoredDistribution::sparse_top_k(&d, p, k),
        None => Ok(StoredDistribution::Dense(d)),
    };
    let layer_distributions = if options.layer_distributions {
        let projected = project_all(model, &trace, lens_norm)?;
        Some(projected.into_iter().map(|ld| store(ld.dist)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let perturbed_distributions = if options.perturbed_distributions {
        Some(outcomes.into_iter().map(|o| store(o.q_dist)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let manifest = TraceManifest {
        format_version: FORMAT_VERSION,
        n_layers: cfg.n_layers,
        d_model: cfg.d_model,
        vocab_size: cfg.vocab_size,
        seq_len: sample.seq_len(),
        token_ids: sample.token_ids.clone(),
        context_indices: sample.context_indices.clone(),
        query_indices: sample.query_indices.clone(),
        has_hidden_states: options.hidden_states,
        has_layer_distributions: options.layer_distributions,
        has_perturbed_distributions: options.perturbed_distributions,
        top_k: options.top_k,
        endianness: "little".into(),
        lens_norm,
        group_id: (sample.group_id > 0).then_some(sample.group_id),
    };
    let out = ExternalTrace {
        manifest,
        final_distribution: trace.final_distribution.clone(),
        hidden_states: options.hidden_states.then_some(trace.states),
        layer_distributions,
        perturbed_distributions,
    };
    out.validate()?;
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `trace` to a fresh directory `dir`. The files are assembled in a
/// sibling temp directory and renamed into place, so readers never see a
/// partial trace. Fails if `dir` already exists.
pub fn write_trace(trace: &ExternalTrace, dir: &Path) -> Result<()> {
    trace.validate()?;
    if dir.exists() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "trace directory already exists"),
        ));
    }
    let name = dir
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no directory name", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let written = write_contents(trace, &tmp).and_then(|_| fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e)));
    if written.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    written
}

fn write_contents(trace: &ExternalTrace, dir: &Path) -> Result<()> {
    write_file(&dir.join(MANIFEST_FILE), trace.manifest.to_canonical_json()?.as_bytes())?;
    write_file(&dir.join(FINAL_DIST_FILE), &f64s_to_le_bytes(trace.final_distribution.probs()))?;
    for (l, h) in trace.hidden_states.iter().flatten().enumerate() {
        write_file(&dir.join(hidden_file(l + 1)), &h.to_le_bytes())?;
    }
    for (l, d) in trace.layer_distributions.iter().flatten().enumerate() {
        write_file(&dir.join(layer_dist_file(l + 1)), &d.to_blob())?;
    }
    for (l, d) in trace.perturbed_distributions.iter().flatten().enumerate() {
        write_file(&dir.join(q_dist_file(l + 1)), &d.to_blob())?;
    }
    Ok(())
}

fn read_blob(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::corrupt(path, "missing blob")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_exact_f64s(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = read_blob(path)?;
    if bytes.len() != count * 8 {
        return Err(Error::corrupt(
            path,
            format!("expected {} bytes, found {}", count * 8, bytes.len()),
        ));
    }
    Ok(f64s_from_le_bytes(&bytes))
}

/// A dense distribution from an exporter: accepted as is when it meets the
/// in-process tolerance, renormalized when it is within
/// `EXTERNAL_SUM_TOLERANCE` of one.
fn external_dense(path: &Path, probs: Vec<f64>) -> Result<ProbabilityDistribution> {
    if let Ok(d) = ProbabilityDistribution::dense(probs.clone()) {
        return Ok(d);
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::corrupt(path, "non-finite or negative probability"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > EXTERNAL_SUM_TOLERANCE {
        return Err(Error::corrupt(path, format!("probabilities sum to {sum}")));
    }
    ProbabilityDistribution::dense(probs.iter().map(|p| p / sum).collect()).map_err(|e| Error::corrupt(path, e.to_string()))
}

fn read_stored(path: &Path, m: &TraceManifest) -> Result<StoredDistribution> {
    if m.top_k.is_none() {
        let probs = read_exact_f64s(path, m.vocab_size)?;
        return external_dense(path, probs).map(StoredDistribution::Dense);
    }
    let bytes = read_blob(path)?;
    if bytes.is_empty() || bytes.len() % 16 != 0 {
        return Err(Error::corrupt(
            path,
            format!("sparse blob of {} bytes is not n ids followed by n masses", bytes.len()),
        ));
    }
    let values = f64s_from_le_bytes(&bytes);
    let (raw_ids, masses) = values.split_at(values.len() / 2);
    let ids = raw_ids
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v >= 0.0 && v < m.vocab_size as f64 {
                Ok(v as usize)
            } else {
                Err(Error::corrupt(path, format!("invalid token id {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut masses = masses.to_vec();
    let sum: f64 = masses.iter().sum();
    if sum > 1.0 && sum <= 1.0 + EXTERNAL_SUM_TOLERANCE {
        masses.iter_mut().for_each(|v| *v /= sum);
    }
    SparseMass::new(ids, masses)
        .map(StoredDistribution::Sparse)
        .map_err(|e| Error::corrupt(path, e.to_string()))
}

fn per_layer<T>(n: usize, f: impl FnMut(usize) -> Result<T>) -> Result<Vec<T>> {
    (1..=n).map(f).collect()
}

/// Loads and validates a trace directory. Files not named by the manifest
/// are ignored.
pub fn read_trace(dir: &Path) -> Result<ExternalTrace> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(&manifest_path, e.to_string()))?;
    if let Some(v) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if v > FORMAT_VERSION as u64 {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                supported: FORMAT_VERSION,
            });
        }
    }
    let manifest: TraceManifest =
        serde_json::from_value(raw).map_err(|e| Error::corrupt(&manifest_path, e.to_string()))?;
    manifest.validate().map_err(|e| match e {
        Error::InvalidInput(reason) => Error::corrupt(&manifest_path, reason),
        other => other,
    })?;
    let m = &manifest;
    let final_path = dir.join(FINAL_DIST_FILE);
    let final_distribution = external_dense(&final_path, read_exact_f64s(&final_path, m.vocab_size)?)?;
    let hidden_states = m
        .has_hidden_states
        .then(|| {
            per_layer(m.n_layers, |l| {
                let path = dir.join(hidden_file(l));
                let data = read_exact_f64s(&path, m.seq_len * m.d_model)?;
                Tensor::new(vec![m.seq_len, m.d_model], data)
            })
        })
        .transpose()?;
    let layer_distributions = m
        .has_layer_distributions
        .then(|| per_layer(m.n_layers, |l| read_stored(&dir.join(layer_dist_file(l)), m)))
        .transpose()?;
    let perturbed_distributions = m
        .has_perturbed_distributions
        .then(|| per_layer(m.n_layers, |l| read_stored(&dir.join(q_dist_file(l)), m)))
        .transpose()?;
    let trace = ExternalTrace {
        manifest,
        hidden_states,
        final_distribution,
        layer_distributions,
        perturbed_distributions,
    };
    trace.validate().map_err(|e| match e {
        Error::InvalidInput(reason) => Error::corrupt(dir, reason),
        other => other,
    })?;
    Ok(trace)
}

/// Trace directories directly under `root` (those holding a manifest),
/// sorted by name.
pub fn list_trace_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}
