//! Experiment harness: CSV/synthetic data loading, repeated-run
//! orchestration across the local/federated/global settings, and report
//! emission.

mod data;
mod report;
mod runner;

pub use data::{dataset_forest_defaults, load_csv, write_csv};
pub use report::{config_digest, emit_report, report_csv_string, summary_toml_string};
pub use runner::{
    run_experiment, DatasetConfig, ExperimentConfig, ExperimentReport, MetricKind, ReportCell,
    RunConfig, Setting, SynthSpec,
};
