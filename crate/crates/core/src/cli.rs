//! Command-line front end. `run` parses arguments, dispatches a subcommand
//! and maps the outcome to an exit code: 0 on success, 2 on invalid input
//! or usage, 1 on runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::diagnostics::{parse_fractions, Fraction, Normalization, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::lens::LensNorm;
use crate::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use crate::pipeline::{diagnose_model, diagnose_traces, scan_profiles, scan_rows, DiagnoseConfig, ScanRow, SupportMode, DEFAULT_TOP_K};
use crate::prompt::{
    builtin_antonyms, generate_prompts, parse_prompt, read_pairs, tokenize, tokenize_grouped, SampleRecord,
    StructuredPrompt, TokenizedSample, Vocab, WordPair,
};
use crate::trace_io::{
    capture_trace, emit_report, list_trace_dirs, read_report, read_trace, scan_csv, write_trace, CaptureOptions,
    ExternalTrace, ReportFormat, MANIFEST_FILE,
};
use crate::trainer::{format_table, write_run_artifacts, DeskReport, DeskSettings};

pub const SEED_ENV: &str = "LAYERTRACER_SEED";

#[derive(Debug, Parser)]
#[command(name = "layertracer", version, about = "Layer-wise task-particle and sensitivity diagnostics with a freeze/train harness")]
pub struct Cli {
    /// Seed for every random choice (prompt sampling, model init, batches).
    #[arg(long, global = true, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate structured prompts and write the tokenized sample dump.
    BuildCorpus(BuildCorpusArgs),
    /// Diagnose prompts or stored traces and emit heatmaps and a boundary scan.
    Diagnose(DiagnoseArgs),
    /// JS curve of one prompt under context masking; optionally export its trace.
    Perturb(PerturbArgs),
    /// Boundary alignment scan from a report or from raw TP/LS profiles.
    Scan(ScanArgs),
    /// Pretrain, then compare the three freeze/train strategies.
    Train(TrainArgs),
    /// Pretrain, then compare the two hybrid placements of the pretrained blocks.
    Hybrid(TrainArgs),
    /// Validate a trace directory and summarize its contents.
    InspectTrace(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PromptSource {
    /// Word-pair file, one `word1,word2` per line [default: built-in antonym list].
    #[arg(long)]
    pub pairs: Option<PathBuf>,

    /// Number of prompts to generate.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,

    /// Number of equal consecutive groups (heatmap rows).
    #[arg(long, default_value_t = 10)]
    pub groups: usize,

    /// Tokenizer: `char` (printable ASCII) or `word` (whitespace words of the prompts).
    #[arg(long, default_value = "char")]
    pub tokenizer: String,
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    #[command(flatten)]
    pub source: PromptSource,

    /// Output JSON file.
    #[arg(long, default_value = "samples.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Checkpoint directory written by `train --save-checkpoint` [default: a freshly initialized model].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Layers of the freshly initialized model.
    #[arg(long, default_value_t = 8)]
    pub layers: usize,

    /// Width of the freshly initialized model.
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,

    /// Attention heads of the freshly initialized model.
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Stabilizer in the Ratio and ΔJS denominators.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,

    /// Task-particle threshold: layers with Ratio > tau form the interval.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,

    /// Vocabulary support for P_t(l) and JS(l): `full` or `top-k`.
    #[arg(long, default_value = "full")]
    pub support: String,

    /// K of the aligned top-K support; giving it selects top-K support [default: 10].
    #[arg(long)]
    pub top_k: Option<usize>,

    /// Apply the final norm before the LM head when reading layers: `final` or `none`.
    #[arg(long, default_value = "final")]
    pub lens_norm: String,

    /// Profile normalization before scoring: `min-max` or `z-score-clipped`.
    #[arg(long, default_value = "min-max")]
    pub normalization: String,

    /// Split fractions of the boundary scan, as exact rationals.
    #[arg(long, default_value = "1/3,1/2,2/3")]
    pub fractions: String,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub source: PromptSource,

    /// Sample dump from `build-corpus` instead of generated prompts.
    #[arg(long, conflicts_with = "pairs")]
    pub samples_file: Option<PathBuf>,

    /// Directory of trace directories to diagnose instead of prompts.
    #[arg(long, conflicts_with_all = ["pairs", "samples_file"])]
    pub traces: Option<PathBuf>,

    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub metrics: MetricArgs,

    /// Worker threads for per-sample work; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Output formats, comma separated.
    #[arg(long, default_value = "json,csv")]
    pub format: String,

    /// Output directory.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Prompt text, e.g. `Example:good->Bad, no-Yes; Query:bad->`.
    #[arg(long)]
    pub prompt: String,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Write the full trace of this prompt to this (new) directory.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,

    /// Store trace distributions top-K sparse.
    #[arg(long)]
    pub top_k: Option<usize>,

    /// Leave hidden states out of the trace.
    #[arg(long)]
    pub no_hidden: bool,

    /// Lens norm recorded with the trace's layer distributions: `final` or `none`.
    #[arg(long, default_value = "final")]
    pub lens_norm: String,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Report JSON written by `diagnose`.
    #[arg(long, required_unless_present = "profiles")]
    pub report: Option<PathBuf>,

    /// JSON object `{"tp": [...], "ls": [...]}` of per-layer profiles.
    #[arg(long, conflicts_with = "report")]
    pub profiles: Option<PathBuf>,

    /// Split fractions, as exact rationals.
    #[arg(long, default_value = "1/3,1/2,2/3")]
    pub fractions: String,

    /// `min-max` or `z-score-clipped` [default: the report's setting, else min-max].
    #[arg(long)]
    pub normalization: Option<String>,

    /// Also write the scan table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Seconds-scale settings (4 layers, width 16, 10 steps) for dry runs.
    #[arg(long)]
    pub smoke: bool,

    /// Pretraining steps [default: 600, smoke 10].
    #[arg(long)]
    pub pretrain_steps: Option<usize>,

    /// Continued-pretraining steps per run [default: 100, smoke 10].
    #[arg(long)]
    pub continue_steps: Option<usize>,

    /// Shallow/deep split fraction for the strategies.
    #[arg(long, default_value = "1/2")]
    pub split: String,

    /// Root for run artifact directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,

    /// Save the pretrained base model here.
    #[arg(long)]
    pub save_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Trace directory.
    pub dir: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildCorpus(a) => build_corpus(a, cli.seed),
        Command::Diagnose(a) => diagnose(a, cli.seed),
        Command::Perturb(a) => perturb(a, cli.seed),
        Command::Scan(a) => scan(a),
        Command::Train(a) => train(a, cli.seed, true),
        Command::Hybrid(a) => train(a, cli.seed, false),
        Command::InspectTrace(a) => inspect_trace(a),
    }
}

fn load_pairs(path: Option<&Path>) -> Result<Vec<WordPair>> {
    match path {
        Some(p) => read_pairs(p),
        None => Ok(builtin_antonyms()),
    }
}

fn vocab_for(name: &str, prompts: &[StructuredPrompt]) -> Result<Vocab> {
    match name {
        "char" => Ok(Vocab::Char),
        "word" => Ok(Vocab::words_from(prompts.iter().map(|p| p.text.as_str()))),
        _ => Err(Error::invalid(format!("tokenizer must be char or word, got {name:?}"))),
    }
}

fn prompts_and_samples(source: &PromptSource, seed: u64) -> Result<(Vec<StructuredPrompt>, Vec<TokenizedSample>, Vocab)> {
    let pairs = load_pairs(source.pairs.as_deref())?;
    let prompts = generate_prompts(&pairs, source.samples, seed)?;
    let vocab = vocab_for(&source.tokenizer, &prompts)?;
    let samples = tokenize_grouped(&prompts, &vocab, source.groups)?;
    Ok((prompts, samples, vocab))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T, what: &str) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|source| Error::Json {
            context: what.into(),
            source,
        })
}

fn build_corpus(a: &BuildCorpusArgs, seed: u64) -> Result<()> {
    let (prompts, samples, _) = prompts_and_samples(&a.source, seed)?;
    let records: Vec<SampleRecord> = prompts.iter().zip(&samples).map(|(p, s)| SampleRecord::new(p, s)).collect();
    write_text(&a.out, &to_json(&records, "sample dump")?)?;
    println!("wrote {} samples in {} groups to {}", records.len(), a.source.groups, a.out.display());
    Ok(())
}

fn load_model(args: &ModelArgs, vocab_size: usize, max_seq: usize, seed: u64) -> Result<Model> {
    let model = match &args.checkpoint {
        Some(dir) => load_checkpoint(dir)?,
        None => Model::new(
            ModelConfig::transformer(args.layers, args.d_model, args.heads, vocab_size, max_seq.max(1)),
            seed,
        )?,
    };
    let cfg = model.config();
    if cfg.vocab_size != vocab_size {
        return Err(Error::invalid(format!(
            "model vocabulary has {} entries, tokenizer has {vocab_size}",
            cfg.vocab_size
        )));
    }
    if max_seq > cfg.max_seq_len {
        return Err(Error::invalid(format!(
            "longest sample has {max_seq} tokens, model accepts {}",
            cfg.max_seq_len
        )));
    }
    Ok(model)
}

fn metric_config(m: &MetricArgs, n_groups: usize, jobs: usize) -> Result<DiagnoseConfig> {
    let support = match (m.support.as_str(), m.top_k) {
        (_, Some(k)) => SupportMode::TopK { k },
        ("full", None) => SupportMode::Full,
        ("top-k", None) => SupportMode::TopK { k: DEFAULT_TOP_K },
        (other, None) => other.parse()?,
    };
    let config = DiagnoseConfig {
        epsilon: m.epsilon,
        tau: m.tau,
        lens_norm: m.lens_norm.parse()?,
        support,
        normalization: m.normalization.parse()?,
        fractions: parse_fractions(&m.fractions)?,
        n_groups,
        jobs,
    };
    config.validate().map_err(|e| match e {
        Error::InvalidConfig(msg) => Error::InvalidInput(msg),
        other => other,
    })?;
    Ok(config)
}

fn read_sample_dump(path: &Path) -> Result<Vec<TokenizedSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<SampleRecord> = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    Ok(records
        .into_iter()
        .map(|r| TokenizedSample {
            token_ids: r.token_ids,
            context_indices: r.context_indices,
            query_indices: r.query_indices,
            group_id: r.group_id,
        })
        .collect())
}

fn parse_formats(s: &str) -> Result<Vec<ReportFormat>> {
    s.split(',').map(|f| f.trim().parse()).collect()
}

fn diagnose(a: &DiagnoseArgs, seed: u64) -> Result<()> {
    let formats = parse_formats(&a.format)?;
    let report = if let Some(root) = &a.traces {
        let dirs = list_trace_dirs(root)?;
        let traces = dirs.iter().map(|d| read_trace(d)).collect::<Result<Vec<ExternalTrace>>>()?;
        let config = metric_config(&a.metrics, a.source.groups, a.jobs)?;
        let model = a.model.checkpoint.as_deref().map(load_checkpoint).transpose()?;
        diagnose_traces(&traces, model.as_ref(), &config)?
    } else {
        let (samples, vocab_size) = match &a.samples_file {
            Some(path) => {
                let samples = read_sample_dump(path)?;
                let groups = samples.iter().map(|s| s.group_id).max().unwrap_or(0);
                if groups != a.source.groups {
                    return Err(Error::invalid(format!(
                        "sample dump has {groups} groups but --groups is {}",
                        a.source.groups
                    )));
                }
                let vocab_size = if a.source.tokenizer == "char" {
                    Vocab::Char.size()
                } else {
                    return Err(Error::invalid("sample dumps are diagnosed with the char tokenizer"));
                };
                (samples, vocab_size)
            }
            None => {
                let (_, samples, vocab) = prompts_and_samples(&a.source, seed)?;
                (samples, vocab.size())
            }
        };
        let max_seq = samples.iter().map(TokenizedSample::seq_len).max().unwrap_or(0);
        let model = load_model(&a.model, vocab_size, max_seq, seed)?;
        let config = metric_config(&a.metrics, a.source.groups, a.jobs)?;
        diagnose_model(&model, &samples, &config, Some(seed))?
    };
    let files = emit_report(&report, &a.out, &formats)?;
    print_scan(&report.scan_table);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn perturb(a: &PerturbArgs, seed: u64) -> Result<()> {
    let prompt = parse_prompt(&a.prompt)?;
    let sample = tokenize(&prompt, &Vocab::Char)?;
    let model = load_model(&a.model, Vocab::Char.size(), sample.seq_len(), seed)?;
    let options = CaptureOptions {
        hidden_states: !a.no_hidden,
        top_k: a.top_k,
        ..CaptureOptions::default()
    };
    let lens_norm: LensNorm = a.lens_norm.parse()?;
    let trace = capture_trace(&model, &sample, lens_norm, options)?;
    let config = DiagnoseConfig {
        n_groups: 1,
        support: a.top_k.map_or(SupportMode::Full, |k| SupportMode::TopK { k }),
        ..DiagnoseConfig::default()
    };
    let diag = crate::pipeline::diagnose_trace(&trace, None, 0, 1, &config)?;
    println!("layer,js,target_prob");
    for (l, (js, pt)) in diag.sensitivity.js.iter().zip(&diag.target_probs).enumerate() {
        println!("{},{js},{pt}", l + 1);
    }
    if let Some(dir) = &a.trace_out {
        write_trace(&trace, dir)?;
        println!("wrote trace {}", dir.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawProfiles {
    tp: Vec<f64>,
    ls: Vec<f64>,
}

fn scan(a: &ScanArgs) -> Result<()> {
    let fractions: Vec<Fraction> = parse_fractions(&a.fractions)?;
    let explicit: Option<Normalization> = a.normalization.as_deref().map(str::parse).transpose()?;
    let (tp, ls, normalization) = match (&a.report, &a.profiles) {
        (Some(path), _) => {
            let report = read_report(path)?;
            let n = explicit.unwrap_or(report.metadata.normalization);
            (report.tp_profile, report.ls_profile, n)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let raw: RawProfiles = serde_json::from_str(&text).map_err(|source| Error::Json {
                context: path.display().to_string(),
                source,
            })?;
            (raw.tp, raw.ls, explicit.unwrap_or_default())
        }
        (None, None) => return Err(Error::invalid("give --report or --profiles")),
    };
    let (scan, tp_degenerate, ls_degenerate) = scan_profiles(&tp, &ls, normalization, &fractions)?;
    if tp_degenerate || ls_degenerate {
        log::warn!("degenerate profile (all values equal) normalized to zeros");
    }
    let rows = scan_rows(&scan);
    print_scan(&rows);
    if let Some(out) = &a.out {
        let bytes = scan_csv(&rows)?;
        write_text(out, &String::from_utf8_lossy(&bytes))?;
    }
    Ok(())
}

fn print_scan(rows: &[ScanRow]) {
    println!("{:>8}  {:>10}  {:>12}", "ratio", "split", "score");
    for r in rows {
        println!("{:>8}  {:>10}  {:>12.6}", r.ratio.to_string(), r.split_layer, r.score);
    }
}

fn train(a: &TrainArgs, seed: u64, strategies: bool) -> Result<()> {
    let mut settings = if a.smoke {
        DeskSettings::smoke(seed)
    } else {
        DeskSettings::desk(seed)
    };
    if let Some(steps) = a.pretrain_steps {
        settings.pretrain.steps = steps;
    }
    if let Some(steps) = a.continue_steps {
        settings.continued.steps = steps;
    }
    settings.split = a.split.parse()?;
    let (base, report) = DeskReport::run(&settings, strategies, !strategies)?;
    if let Some(dir) = &a.save_checkpoint {
        save_checkpoint(&base, dir)?;
        println!("saved base checkpoint to {}", dir.display());
    }
    let run_dir = write_run_artifacts(&a.out, &report)?;
    let rows = if strategies { &report.strategies } else { &report.hybrids };
    print!("{}", format_table(rows));
    println!("artifacts in {}", run_dir.display());
    Ok(())
}

fn inspect_trace(a: &InspectArgs) -> Result<()> {
    if !a.dir.join(MANIFEST_FILE).is_file() {
        return Err(Error::invalid(format!("{} has no {MANIFEST_FILE}", a.dir.display())));
    }
    let trace = read_trace(&a.dir)?;
    let m = &trace.manifest;
    println!("format_version  {}", m.format_version);
    println!("layers          {}", m.n_layers);
    println!("d_model         {}", m.d_model);
    println!("vocab_size      {}", m.vocab_size);
    println!("seq_len         {}", m.seq_len);
    println!("context/query   {}/{}", m.context_indices.len(), m.query_indices.len());
    println!("hidden states   {}", m.has_hidden_states);
    println!("layer dists     {}", m.has_layer_distributions);
    println!("perturbed dists {}", m.has_perturbed_distributions);
    println!("storage         {}", m.top_k.map_or("dense".to_string(), |k| format!("top-{k} sparse")));
    println!("lens_norm       {}", m.lens_norm);
    if m.has_layer_distributions && m.has_perturbed_distributions && !m.context_indices.is_empty() {
        let config = DiagnoseConfig {
            n_groups: 1,
            support: m.top_k.map_or(SupportMode::Full, |k| SupportMode::TopK { k }),
            ..DiagnoseConfig::default()
        };
        let d = crate::pipeline::diagnose_trace(&trace, None, 0, 1, &config)?;
        println!("target token    {} (p = {})", d.target.token_id, d.target.prob_final);
        println!("JS(N)           {}", d.sensitivity.js.last().copied().unwrap_or_default());
    }
    println!("valid");
    Ok(())
}
