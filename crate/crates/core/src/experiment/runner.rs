//! The experiment pipeline: R repetitions of split → train → federate →
//! evaluate, aggregated into a report with Dunn significance annotations.
//!
//! Every repetition owns its own seed, derived as `derive(base_seed, r)`,
//! and every random decision inside a repetition draws from a named
//! substream of that seed. Repetitions are therefore independent of
//! execution order, and serial and parallel runs produce identical
//! reports.

use std::borrow::Cow;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::dataset::SurvivalDataset;
use crate::datasplit::{
    label_skew_split, synth_survival, train_test_split, validation_split, SplitConfig,
};
use crate::error::{Error, Result};
use crate::experiment::data::{dataset_forest_defaults, load_csv};
use crate::federation::{
    assign_tree_counts, evaluate_trees, local_train, merge_ensemble, sample_trees,
    ClientContribution, ClientState, SamplingStrategy,
};
use crate::metrics::{
    censoring_km, concordance_index_ipcw, cumulative_auc, integrated_brier_score, EvaluationGrid,
};
use crate::rsf::{fit_forest, RsfParams, SurvivalForest};
use crate::seeds::{derive, stream};
use crate::stats::kruskal_wallis_dunn;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn rng_for(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

// ── Configuration ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Local,
    Federated,
    Global,
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Local => "local",
            Setting::Federated => "federated",
            Setting::Global => "global",
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    CIpcw,
    Ibs,
    CumulativeAuc,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::CIpcw, MetricKind::Ibs, MetricKind::CumulativeAuc];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::CIpcw => "c_ipcw",
            MetricKind::Ibs => "ibs",
            MetricKind::CumulativeAuc => "cumulative_auc",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    /// Target fraction of censored records.
    pub censoring: f64,
}

/// Where the data comes from: a CSV file (with schema) or the synthetic
/// generator. Exactly one of `csv`/`synth` must be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Report label; also selects per-dataset forest defaults. Defaults to
    /// the CSV file stem, or "synth".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl DatasetConfig {
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match (&self.csv, &self.synth) {
            (Some(path), _) => path
                .file_stem()
                .map(|s| s.to_string_lossy().to_lowercase())
                .unwrap_or_else(|| "dataset".into()),
            (None, Some(_)) => "synth".into(),
            (None, None) => "dataset".into(),
        }
    }
}

fn default_repetitions() -> usize {
    20
}
fn default_seed() -> u64 {
    42
}
fn default_strategies() -> Vec<SamplingStrategy> {
    SamplingStrategy::ALL.to_vec()
}
fn default_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}
fn default_settings() -> Vec<Setting> {
    vec![Setting::Local, Setting::Federated, Setting::Global]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Global ensemble size T; defaults to the per-client tree count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<SamplingStrategy>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_settings")]
    pub settings: Vec<Setting>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            repetitions: default_repetitions(),
            seed: default_seed(),
            ensemble_size: None,
            strategies: default_strategies(),
            metrics: default_metrics(),
            settings: default_settings(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    /// Overrides the per-dataset forest defaults wholesale when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<RsfParams>,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.csv, &self.dataset.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set either dataset.csv or dataset.synth, not both".into()))
            }
            (None, None) => {
                return Err(Error::Config("dataset needs a csv path or a synth spec".into()))
            }
            (Some(_), None) => {
                if self.dataset.time_column.is_none() || self.dataset.event_column.is_none() {
                    return Err(Error::Config(
                        "csv datasets need time_column and event_column".into(),
                    ));
                }
            }
            (None, Some(spec)) => {
                if spec.n == 0 || spec.d == 0 || !(0.0..1.0).contains(&spec.censoring) {
                    return Err(Error::Config(
                        "synth spec needs n >= 1, d >= 1, censoring in [0, 1)".into(),
                    ));
                }
            }
        }
        self.split.validate()?;
        if let Some(params) = &self.forest {
            params.validate()?;
        } else if dataset_forest_defaults(&self.dataset.label()).is_none() {
            return Err(Error::Config(format!(
                "no built-in forest defaults for dataset {:?}; add a [forest] section",
                self.dataset.label()
            )));
        }
        let run = &self.run;
        if run.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if run.strategies.is_empty() || run.metrics.is_empty() || run.settings.is_empty() {
            return Err(Error::Config(
                "need at least one strategy, metric, and setting".into(),
            ));
        }
        for (what, dup) in [
            ("strategies", has_duplicates(&run.strategies)),
            ("metrics", has_duplicates(&run.metrics)),
            ("settings", has_duplicates(&run.settings)),
        ] {
            if dup {
                return Err(Error::Config(format!("duplicate entries in run.{what}")));
            }
        }
        if run.ensemble_size == Some(0) {
            return Err(Error::Config("ensemble_size must be >= 1".into()));
        }
        Ok(())
    }

    /// The forest hyperparameters this experiment trains with (seed field
    /// is ignored; the harness reseeds per repetition).
    pub fn resolved_params(&self) -> Result<RsfParams> {
        if let Some(params) = &self.forest {
            return Ok(params.clone());
        }
        let label = self.dataset.label();
        let (n_trees, max_depth) = dataset_forest_defaults(&label).ok_or_else(|| {
            Error::Config(format!("no built-in forest defaults for dataset {label:?}"))
        })?;
        let mut params = RsfParams::new(n_trees, 0);
        params.max_depth = max_depth;
        Ok(params)
    }

    pub fn ensemble_size(&self) -> Result<usize> {
        Ok(self.run.ensemble_size.unwrap_or(self.resolved_params()?.n_trees))
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, x)| items[..i].contains(x))
}

// ── Report structures ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub setting: Setting,
    /// Present only for the Federated setting.
    pub strategy: Option<SamplingStrategy>,
    pub metric: MetricKind,
    pub mean: f64,
    pub std: f64,
    /// One value per successful repetition, in repetition order.
    pub raw: Vec<f64>,
    /// Dunn's-test verdict against the Concordance strategy; `None` where
    /// the comparison does not apply.
    pub significant_vs_concordance: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub dataset: String,
    pub base_seed: u64,
    pub config_sha256: String,
    pub repetitions: usize,
    pub failed_repetitions: Vec<usize>,
    pub cells: Vec<ReportCell>,
}

impl ExperimentReport {
    pub fn successful_repetitions(&self) -> usize {
        self.repetitions - self.failed_repetitions.len()
    }

    pub fn cell(
        &self,
        setting: Setting,
        strategy: Option<SamplingStrategy>,
        metric: MetricKind,
    ) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.setting == setting && c.strategy == strategy && c.metric == metric)
    }
}

// ── Repetition pipeline ──────────────────────────────────────────────────

enum DataSource<'a> {
    Loaded(&'a SurvivalDataset),
    Synth(SynthSpec),
}

/// Everything one repetition trains: the shared split, the per-client
/// states (already fitted), and the pooled-train forest.
pub(crate) struct Repetition {
    pub train: SurvivalDataset,
    pub test: SurvivalDataset,
    pub clients: Vec<ClientState>,
    pub global: Option<SurvivalForest>,
}

fn prepare_repetition(
    rep: usize,
    base_seed: u64,
    source: &DataSource,
    config: &ExperimentConfig,
    params: &RsfParams,
) -> Result<Repetition> {
    let rep_seed = derive(base_seed, rep as u64);
    let data: Cow<SurvivalDataset> = match source {
        DataSource::Loaded(ds) => Cow::Borrowed(*ds),
        DataSource::Synth(spec) => Cow::Owned(synth_survival(
            spec.n,
            spec.d,
            spec.censoring,
            &mut rng_for(derive(rep_seed, stream::DATA)),
        )?),
    };

    let (train, test) = train_test_split(
        &data,
        config.split.test_fraction,
        &mut rng_for(derive(rep_seed, stream::SPLIT)),
    )?;

    let needs_clients = config
        .run
        .settings
        .iter()
        .any(|s| matches!(s, Setting::Local | Setting::Federated));
    let clients = if needs_clients {
        let parts = label_skew_split(
            &train,
            &config.split,
            &mut rng_for(derive(rep_seed, stream::SKEW)),
        )?;
        let mut clients = Vec::with_capacity(parts.len());
        for (k, part) in parts.into_iter().enumerate() {
            let (ctrain, cval) = validation_split(
                &part,
                config.split.validation_fraction,
                &mut rng_for(derive(derive(rep_seed, stream::VALIDATION), k as u64)),
            )?;
            let mut client = ClientState::new(k, ctrain, cval);
            let mut client_params = params.clone();
            client_params.seed = derive(derive(rep_seed, stream::CLIENT_TRAIN), k as u64);
            local_train(&mut client, &client_params)?;
            clients.push(client);
        }
        clients
    } else {
        Vec::new()
    };

    let global = if config.run.settings.contains(&Setting::Global) {
        let mut global_params = params.clone();
        global_params.seed = derive(rep_seed, stream::GLOBAL_TRAIN);
        Some(fit_forest(&train, &global_params)?)
    } else {
        None
    };

    Ok(Repetition {
        train,
        test,
        clients,
        global,
    })
}

fn forest_metric_values(
    forest: &SurvivalForest,
    test: &SurvivalDataset,
    grid: &EvaluationGrid,
    g: &StepCurve,
    metrics: &[MetricKind],
) -> Result<Vec<f64>> {
    let risks = forest.risk_scores(test)?;
    metrics
        .iter()
        .map(|m| match m {
            MetricKind::CIpcw => concordance_index_ipcw(&risks, test, g, grid.tau),
            MetricKind::Ibs => {
                let curves = forest.survival_curves(test)?;
                integrated_brier_score(&curves, test, grid, g)
            }
            MetricKind::CumulativeAuc => cumulative_auc(&risks, test, grid, g),
        })
        .collect()
}

/// Build the federated ensemble for one strategy, reusing the shared
/// per-repetition quota plan.
fn federated_forest(
    rep_seed: u64,
    clients: &mut [ClientState],
    quotas: &[usize],
    strategy: SamplingStrategy,
) -> Result<SurvivalForest> {
    let strategy_idx = SamplingStrategy::ALL
        .iter()
        .position(|s| *s == strategy)
        .expect("strategy is one of ALL") as u64;
    let mut contributions = Vec::with_capacity(clients.len());
    for (client, &quota) in clients.iter_mut().zip(quotas) {
        let weights = evaluate_trees(client, strategy)?;
        client.tree_weights = Some(weights);
        let mut rng = rng_for(derive(
            derive(derive(rep_seed, stream::SAMPLE), client.client_id as u64),
            strategy_idx,
        ));
        let trees = sample_trees(client, quota, &mut rng)?;
        contributions.push(ClientContribution {
            client_id: client.client_id,
            trees,
            grid: client.forest.as_ref().expect("trained").event_time_grid.clone(),
        });
    }
    merge_ensemble(&contributions)
}

/// One repetition's value for every report cell, in cell order.
fn evaluate_repetition(
    rep: usize,
    base_seed: u64,
    mut repetition: Repetition,
    config: &ExperimentConfig,
    ensemble_size: usize,
) -> Result<Vec<f64>> {
    let rep_seed = derive(base_seed, rep as u64);
    let grid = EvaluationGrid::from_observed(&repetition.test)?;
    // One censoring distribution, fitted on the pooled training data, for
    // every setting: keeps Local/Federated/Global comparable.
    let g = censoring_km(&repetition.train);
    let metrics = &config.run.metrics;

    let mut values = Vec::new();
    for setting in &config.run.settings {
        match setting {
            Setting::Local => {
                let mut acc = vec![0.0; metrics.len()];
                for client in &repetition.clients {
                    let forest = client.forest.as_ref().expect("trained");
                    let vals = forest_metric_values(forest, &repetition.test, &grid, &g, metrics)?;
                    for (a, v) in acc.iter_mut().zip(vals) {
                        *a += v;
                    }
                }
                let k = repetition.clients.len() as f64;
                values.extend(acc.into_iter().map(|a| a / k));
            }
            Setting::Global => {
                let forest = repetition.global.as_ref().expect("trained");
                values.extend(forest_metric_values(
                    forest,
                    &repetition.test,
                    &grid,
                    &g,
                    metrics,
                )?);
            }
            Setting::Federated => {
                let loads: Vec<(usize, usize)> = repetition
                    .clients
                    .iter()
                    .map(|c| (c.n_local(), c.n_trees()))
                    .collect();
                // One plan per repetition, shared by all strategies, so
                // strategy comparisons differ only in which trees fill the
                // quotas.
                let plan = assign_tree_counts(
                    &loads,
                    ensemble_size,
                    &mut rng_for(derive(rep_seed, stream::PLAN)),
                )?;
                for &strategy in &config.run.strategies {
                    let forest = federated_forest(
                        rep_seed,
                        &mut repetition.clients,
                        &plan.quotas,
                        strategy,
                    )?;
                    values.extend(forest_metric_values(
                        &forest,
                        &repetition.test,
                        &grid,
                        &g,
                        metrics,
                    )?);
                }
            }
        }
    }
    Ok(values)
}

fn run_one(
    rep: usize,
    base_seed: u64,
    source: &DataSource,
    config: &ExperimentConfig,
    params: &RsfParams,
    ensemble_size: usize,
) -> Result<Vec<f64>> {
    let prepared = prepare_repetition(rep, base_seed, source, config, params)?;
    evaluate_repetition(rep, base_seed, prepared, config, ensemble_size)
}

// ── Aggregation ──────────────────────────────────────────────────────────

fn cell_keys(config: &ExperimentConfig) -> Vec<(Setting, Option<SamplingStrategy>, MetricKind)> {
    let mut keys = Vec::new();
    for &setting in &config.run.settings {
        match setting {
            Setting::Local | Setting::Global => {
                for &metric in &config.run.metrics {
                    keys.push((setting, None, metric));
                }
            }
            Setting::Federated => {
                for &strategy in &config.run.strategies {
                    for &metric in &config.run.metrics {
                        keys.push((setting, Some(strategy), metric));
                    }
                }
            }
        }
    }
    keys
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run the full experiment. `parallel` switches repetition execution
/// between rayon and a plain loop; the report is identical either way.
pub fn run_experiment(config: &ExperimentConfig, parallel: bool) -> Result<ExperimentReport> {
    config.validate()?;
    let params = config.resolved_params()?;
    let ensemble_size = config.ensemble_size()?;
    let base_seed = config.run.seed;
    let r = config.run.repetitions;

    let loaded;
    let source = match (&config.dataset.csv, &config.dataset.synth) {
        (Some(path), _) => {
            loaded = load_csv(
                path,
                config.dataset.time_column.as_deref().expect("validated"),
                config.dataset.event_column.as_deref().expect("validated"),
                config.dataset.features.as_deref(),
            )?;
            DataSource::Loaded(&loaded)
        }
        (None, Some(spec)) => DataSource::Synth(*spec),
        (None, None) => unreachable!("validated"),
    };

    let started = Instant::now();
    let results: Vec<Result<Vec<f64>>> = if parallel {
        (0..r)
            .into_par_iter()
            .map(|rep| run_one(rep, base_seed, &source, config, &params, ensemble_size))
            .collect()
    } else {
        (0..r)
            .map(|rep| run_one(rep, base_seed, &source, config, &params, ensemble_size))
            .collect()
    };
    // Wall time goes to the log only; report files stay byte-identical
    // across machines and thread counts.
    log::info!(
        "{}: {r} repetitions in {:.2}s",
        config.dataset.label(),
        started.elapsed().as_secs_f64()
    );

    let keys = cell_keys(config);
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); keys.len()];
    let mut failed = Vec::new();
    for (rep, outcome) in results.into_iter().enumerate() {
        match outcome {
            Ok(values) => {
                debug_assert_eq!(values.len(), keys.len());
                for (bucket, v) in raw.iter_mut().zip(values) {
                    bucket.push(v);
                }
            }
            Err(e) => {
                log::warn!("repetition {rep} failed and was dropped: {e}");
                failed.push(rep);
            }
        }
    }
    let n_ok = r - failed.len();
    if n_ok * 2 < r {
        return Err(Error::Experiment(format!(
            "only {n_ok} of {r} repetitions succeeded"
        )));
    }

    let mut cells: Vec<ReportCell> = keys
        .iter()
        .zip(raw)
        .map(|(&(setting, strategy, metric), values)| {
            let (mean, std) = mean_and_std(&values);
            ReportCell {
                setting,
                strategy,
                metric,
                mean,
                std,
                raw: values,
                significant_vs_concordance: None,
            }
        })
        .collect();

    annotate_significance(config, &mut cells)?;

    Ok(ExperimentReport {
        dataset: config.dataset.label(),
        base_seed,
        config_sha256: super::report::config_digest(config)?,
        repetitions: r,
        failed_repetitions: failed,
        cells,
    })
}

/// Dunn's test across the federated strategies, per metric, against the
/// Concordance strategy — mirroring how strategy tables are starred.
fn annotate_significance(config: &ExperimentConfig, cells: &mut [ReportCell]) -> Result<()> {
    let strategies = &config.run.strategies;
    let c_idx = match strategies
        .iter()
        .position(|s| *s == SamplingStrategy::Concordance)
    {
        Some(i) if strategies.len() >= 2 && config.run.settings.contains(&Setting::Federated) => i,
        _ => return Ok(()),
    };
    for &metric in &config.run.metrics {
        let groups: Vec<Vec<f64>> = strategies
            .iter()
            .map(|&s| {
                cells
                    .iter()
                    .find(|c| c.setting == Setting::Federated && c.strategy == Some(s) && c.metric == metric)
                    .expect("cell exists")
                    .raw
                    .clone()
            })
            .collect();
        let result = kruskal_wallis_dunn(&groups, 0.05)?;
        let pairwise = result.pairwise.expect("dunn requested");
        for (i, &strategy) in strategies.iter().enumerate() {
            if i == c_idx {
                continue;
            }
            let cell = cells
                .iter_mut()
                .find(|c| {
                    c.setting == Setting::Federated
                        && c.strategy == Some(strategy)
                        && c.metric == metric
                })
                .expect("cell exists");
            cell.significant_vs_concordance = Some(pairwise[i][c_idx].significant);
        }
    }
    Ok(())
}
