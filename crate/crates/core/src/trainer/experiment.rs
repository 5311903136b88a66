use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    continued_pretrain, corpus_a, corpus_b, hybrid_placement_run, pretrain, DomainCorpus, RunRecord, Strategy,
    StrategyKind, TrainConfig,
};
use crate::diagnostics::Fraction;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::prompt::CHAR_VOCAB_SIZE;

/// Everything needed to rerun the desk-scale comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSettings {
    pub model: ModelConfig,
    pub seed: u64,
    pub corpus_a_lines: usize,
    pub corpus_b_lines: usize,
    pub held_out_fraction: f64,
    pub pretrain: TrainConfig,
    pub continued: TrainConfig,
    pub split: Fraction,
}

impl DeskSettings {
    /// Eight layers of width 64 over the character vocabulary, pretrained
    /// on roughly 200k tokens of corpus A.
    pub fn desk(seed: u64) -> Self {
        let base = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 8,
            seq_len: 48,
            seed,
            ..TrainConfig::default()
        };
        Self {
            model: ModelConfig::transformer(8, 64, 4, CHAR_VOCAB_SIZE, 96),
            seed,
            corpus_a_lines: 4400,
            corpus_b_lines: 1200,
            held_out_fraction: 0.05,
            pretrain: TrainConfig { steps: 600, ..base.clone() },
            continued: TrainConfig {
                steps: 100,
                learning_rate: 1e-3,
                ..base
            },
            split: Fraction::new(1, 2).expect("1/2"),
        }
    }

    /// A seconds-scale configuration for tests and dry runs.
    pub fn smoke(seed: u64) -> Self {
        let base = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 2,
            seq_len: 16,
            steps: 10,
            seed,
            ..TrainConfig::default()
        };
        Self {
            model: ModelConfig::transformer(4, 16, 2, CHAR_VOCAB_SIZE, 96),
            seed,
            corpus_a_lines: 60,
            corpus_b_lines: 30,
            held_out_fraction: 0.1,
            pretrain: base.clone(),
            continued: base,
            split: Fraction::new(1, 2).expect("1/2"),
        }
    }

    pub fn corpora(&self) -> Result<(DomainCorpus, DomainCorpus)> {
        Ok((
            corpus_a(self.corpus_a_lines, self.seed, self.held_out_fraction)?,
            corpus_b(self.corpus_b_lines, self.seed.wrapping_add(1), self.held_out_fraction)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskReport {
    pub settings: DeskSettings,
    pub pretrain: RunRecord,
    pub strategies: Vec<RunRecord>,
    pub hybrids: Vec<RunRecord>,
}

impl DeskReport {
    /// Pretrains on corpus A, then continues on corpus B under each
    /// strategy and under both hybrid placements, all from the same base.
    pub fn run(settings: &DeskSettings, strategies: bool, hybrids: bool) -> Result<(Model, Self)> {
        let (a, b) = settings.corpora()?;
        let evals = [&a.held_out, &b.held_out];
        let mut base = Model::new(settings.model.clone(), settings.seed)?;
        let pre = pretrain(&mut base, &a.train, &settings.pretrain, &evals)?;
        log::info!("pretrain done: final loss {:?}", pre.final_loss());

        let mut strategy_runs = Vec::new();
        if strategies {
            for kind in StrategyKind::ALL {
                let mut model = base.clone();
                let strategy = Strategy {
                    split: settings.split,
                    ..Strategy::new(kind)
                };
                let rec = continued_pretrain(&mut model, &b.train, &strategy, &settings.continued, &evals)?;
                log::info!("{} done: final loss {:?}", rec.label, rec.final_loss());
                strategy_runs.push(rec);
            }
        }
        let mut hybrid_runs = Vec::new();
        if hybrids {
            for (_, rec) in hybrid_placement_run(&base, &b.train, &settings.continued, &evals)? {
                log::info!("{} done: final loss {:?}", rec.label, rec.final_loss());
                hybrid_runs.push(rec);
            }
        }
        Ok((
            base,
            DeskReport {
                settings: settings.clone(),
                pretrain: pre,
                strategies: strategy_runs,
                hybrids: hybrid_runs,
            },
        ))
    }
}

fn eval_names(records: &[RunRecord]) -> Vec<String> {
    records
        .iter()
        .flat_map(|r| r.eval_losses.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Fixed-width text table: one row per run.
pub fn format_table(records: &[RunRecord]) -> String {
    let names = eval_names(records);
    let label_w = records.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<label_w$}  {:>10}  {:>10}", "run", "trainable", "train_loss");
    for n in &names {
        out.push_str(&format!("  {:>12}", format!("eval:{n}")));
    }
    out.push('\n');
    for r in records {
        let fl = r.final_loss().map_or("-".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!("{:<label_w$}  {:>10}  {:>10}", r.label, r.trainable_params, fl));
        for n in &names {
            let v = r.eval_losses.get(n).map_or("-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("  {v:>12}"));
        }
        out.push('\n');
    }
    out
}

/// The same table as CSV with full-precision values.
pub fn table_csv(records: &[RunRecord]) -> Result<String> {
    let names = eval_names(records);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run".to_string(), "trainable_params".into(), "final_train_loss".into()];
    header.extend(names.iter().map(|n| format!("eval_{n}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.label.clone(),
            r.trainable_params.to_string(),
            r.final_loss().map_or(String::new(), |v| v.to_string()),
        ];
        row.extend(names.iter().map(|n| r.eval_losses.get(n).map_or(String::new(), |v| v.to_string())));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(value: &T, what: &str) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|source| Error::Json {
            context: what.to_string(),
            source,
        })
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Writes `<root>/<timestamp>-seed<seed>/` with the settings snapshot, one
/// directory per run (loss curve CSV, eval JSON, digests) and the
/// comparison tables. Returns the run directory.
pub fn write_run_artifacts(root: &Path, report: &DeskReport) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let dir = root.join(format!("{stamp}-seed{}", report.settings.seed));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.json"), json(&report.settings, "settings")?)?;
    let all: Vec<&RunRecord> = std::iter::once(&report.pretrain)
        .chain(&report.strategies)
        .chain(&report.hybrids)
        .collect();
    for r in &all {
        let sub = dir.join(slug(&r.label));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "loss"])?;
        for (i, l) in r.loss_curve.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        write(&sub.join("loss.csv"), bytes)?;
        write(&sub.join("eval.json"), json(&r.eval_losses, "eval losses")?)?;
        let digests = serde_json::json!({
            "frozen_before": r.frozen_param_hash_before,
            "frozen_after": r.frozen_param_hash_after,
            "frozen_layers": r.frozen_layers,
            "layers_before": r.layer_digests_before,
            "layers_after": r.layer_digests_after,
        });
        write(&sub.join("digests.json"), json(&digests, "digests")?)?;
    }
    if !report.strategies.is_empty() {
        write(&dir.join("strategies.csv"), table_csv(&report.strategies)?)?;
        write(&dir.join("strategies.txt"), format_table(&report.strategies))?;
    }
    if !report.hybrids.is_empty() {
        write(&dir.join("hybrid.csv"), table_csv(&report.hybrids)?)?;
        write(&dir.join("hybrid.txt"), format_table(&report.hybrids))?;
    }
    Ok(dir)
}
