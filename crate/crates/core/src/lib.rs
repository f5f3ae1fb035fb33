//! Federated random survival forests with single-round tree sampling.
//!
//! The crate is organized bottom-up:
//!
//! * [`dataset`], [`curve`], [`estimators`] — survival data and the
//!   Kaplan–Meier / Nelson–Aalen step-function estimators everything else
//!   is built from.
//! * [`metrics`] — IPCW evaluation: concordance indices, Brier/IBS,
//!   cumulative AUC.
//! * [`rsf`] — random survival forest training with log-rank splits.
//! * [`datasplit`] — train/test splitting, Dirichlet label-skew federation
//!   splits, and a synthetic data generator.
//! * [`federation`] — the single-communication-round protocol: per-tree
//!   scoring, quota planning, weighted tree sampling, ensemble merging.
//! * [`transport`] — a length-prefixed wire format and a TCP/in-process
//!   session layer for running the protocol across machines.
//! * [`stats`] — Kruskal–Wallis and Dunn post-hoc tests for comparing
//!   sampling strategies.
//! * [`experiment`] — the reproducible benchmark harness and its reports.

pub mod curve;
pub mod dataset;
pub mod datasplit;
pub mod error;
pub mod estimators;
pub mod federation;
pub mod experiment;
pub mod metrics;
pub mod rsf;
pub mod seeds;
pub mod stats;
pub mod transport;

pub use curve::{CurveKind, StepCurve};
pub use dataset::{build_risk_table, RiskTable, SurvivalDataset, SurvivalRecord};
pub use error::{Error, Result};
pub use estimators::{chf_to_survival, kaplan_meier, nelson_aalen};
pub use experiment::{
    dataset_forest_defaults, emit_report, load_csv, run_experiment, write_csv, DatasetConfig,
    ExperimentConfig, ExperimentReport, MetricKind, ReportCell, RunConfig, Setting, SynthSpec,
};
pub use federation::{
    assign_tree_counts, evaluate_trees, local_train, merge_ensemble, run_fedsurf, sample_trees,
    ClientContribution, ClientState, FederationPlan, SamplingStrategy,
};
pub use datasplit::{
    label_skew_split, synth_survival, train_test_split, validation_split, SplitConfig,
};
pub use metrics::{
    brier_score, censoring_km, concordance_index, concordance_index_ipcw, cumulative_auc,
    integrated_brier_score, EvaluationGrid, IpcwWeights,
};
pub use rsf::{
    best_split, fit_forest, fit_tree, logrank_statistic, MaxFeatures, RsfParams, SurvivalForest,
    SurvivalTree, TreeNode,
};
pub use stats::{chi2_survival, kruskal_wallis, kruskal_wallis_dunn, PairwiseCell, TestResult};
pub use transport::{
    deserialize_forest, deserialize_tree, forest_digest, run_client, run_server, serialize_forest,
    serialize_tree, simulate_federation, Message, MessageChannel, ServerOptions, SessionLog,
};
