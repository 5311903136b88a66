use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::canonical_json;
use crate::error::{Error, Result};
use crate::pipeline::{DiagnosticReport, HeatmapReport, ScanRow};

pub const REPORT_JSON: &str = "report.json";
pub const RATIO_CSV: &str = "ratio_heatmap.csv";
pub const DELTA_JS_CSV: &str = "delta_js_heatmap.csv";
pub const SCAN_CSV: &str = "scan.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::invalid(format!("report format must be json or csv, got {s:?}"))),
        }
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// `group,layer_2,...,layer_N` followed by one row per group.
pub fn heatmap_csv(heatmap: &HeatmapReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("group".to_string()).chain(heatmap.layers.iter().map(|l| format!("layer_{l}")));
    w.write_record(header)?;
    for (g, row) in heatmap.groups.iter().zip(&heatmap.values) {
        w.write_record(std::iter::once(g.to_string()).chain(row.iter().map(f64::to_string)))?;
    }
    finish_csv(w)
}

/// `ratio,ratio_value,split_layer,score`, one row per fraction.
pub fn scan_csv(rows: &[ScanRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ratio", "ratio_value", "split_layer", "score"])?;
    for r in rows {
        w.write_record([
            r.ratio.to_string(),
            r.ratio_value.to_string(),
            r.split_layer.to_string(),
            r.score.to_string(),
        ])?;
    }
    finish_csv(w)
}

pub fn report_json(report: &DiagnosticReport) -> Result<String> {
    canonical_json(report, "diagnostic report")
}

pub fn read_report(path: &Path) -> Result<DiagnosticReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Writes the report into `dir` in each requested format and returns the
/// written paths. Refuses a report without samples.
pub fn emit_report(report: &DiagnosticReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if report.samples.is_empty() || report.ratio_heatmap.groups.is_empty() {
        return Err(Error::invalid("report has no profiles to emit"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        files.push((dir.join(REPORT_JSON), report_json(report)?.into_bytes()));
    }
    if formats.contains(&ReportFormat::Csv) {
        files.push((dir.join(RATIO_CSV), heatmap_csv(&report.ratio_heatmap)?));
        files.push((dir.join(DELTA_JS_CSV), heatmap_csv(&report.delta_js_heatmap)?));
        files.push((dir.join(SCAN_CSV), scan_csv(&report.scan_table)?));
    }
    for (path, bytes) in &files {
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
