//! Report emission: a flat CSV for downstream tooling and a TOML summary
//! that echoes the resolved configuration next to the raw per-repetition
//! values.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::runner::{ExperimentConfig, ExperimentReport, ReportCell};

/// SHA-256 of the configuration's canonical TOML form. Stamped into the
/// report so result files can be traced back to the exact settings.
pub fn config_digest(config: &ExperimentConfig) -> Result<String> {
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

fn strategy_field(cell: &ReportCell) -> String {
    match cell.strategy {
        Some(s) => s.name().to_string(),
        None => "-".to_string(),
    }
}

fn significance_field(cell: &ReportCell) -> String {
    match cell.significant_vs_concordance {
        Some(true) => "true".to_string(),
        Some(false) => "false".to_string(),
        None => "-".to_string(),
    }
}

/// The flat results table, one row per (setting, strategy, metric) cell.
pub fn report_csv_string(report: &ExperimentReport) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "dataset",
            "setting",
            "strategy",
            "metric",
            "mean",
            "std",
            "n_runs",
            "significant_vs_concordance",
        ])
        .expect("in-memory write");
    for cell in &report.cells {
        writer
            .write_record([
                report.dataset.as_str(),
                cell.setting.name(),
                strategy_field(cell).as_str(),
                cell.metric.name(),
                format!("{:.6}", cell.mean).as_str(),
                format!("{:.6}", cell.std).as_str(),
                cell.raw.len().to_string().as_str(),
                significance_field(cell).as_str(),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf8")
}

#[derive(Serialize)]
struct SummaryCell<'a> {
    setting: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<&'static str>,
    metric: &'static str,
    mean: f64,
    std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    significant_vs_concordance: Option<bool>,
    raw: &'a [f64],
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    dataset: &'a str,
    base_seed: u64,
    repetitions: usize,
    successful_repetitions: usize,
    failed_repetitions: &'a [usize],
    config_sha256: &'a str,
    config: &'a ExperimentConfig,
    cells: Vec<SummaryCell<'a>>,
}

/// The full summary: provenance scalars, the echoed configuration, and
/// every cell with its raw values at full precision.
pub fn summary_toml_string(report: &ExperimentReport, config: &ExperimentConfig) -> Result<String> {
    let doc = SummaryDoc {
        dataset: &report.dataset,
        base_seed: report.base_seed,
        repetitions: report.repetitions,
        successful_repetitions: report.successful_repetitions(),
        failed_repetitions: &report.failed_repetitions,
        config_sha256: &report.config_sha256,
        config,
        cells: report
            .cells
            .iter()
            .map(|cell| SummaryCell {
                setting: cell.setting.name(),
                strategy: cell.strategy.map(|s| s.name()),
                metric: cell.metric.name(),
                mean: cell.mean,
                std: cell.std,
                significant_vs_concordance: cell.significant_vs_concordance,
                raw: &cell.raw,
            })
            .collect(),
    };
    toml::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))
}

/// Write `report.csv` and `summary.toml` under `out_dir`, creating the
/// directory if needed. Returns the two paths.
pub fn emit_report(
    report: &ExperimentReport,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("report.csv");
    let toml_path = out_dir.join("summary.toml");
    std::fs::write(&csv_path, report_csv_string(report))?;
    std::fs::write(&toml_path, summary_toml_string(report, config)?)?;
    Ok((csv_path, toml_path))
}
