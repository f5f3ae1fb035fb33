//! The single-communication-round federated forest protocol: clients train
//! local forests, score each tree on held-out validation data, and the
//! server assigns per-client tree quotas (proportional to local data size)
//! that clients fill by weighted sampling without replacement. The merged
//! ensemble is an ordinary [`SurvivalForest`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::StepCurve;
use crate::dataset::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimators::chf_to_survival;
use crate::metrics::{
    censoring_km, concordance_index, concordance_index_ipcw, cumulative_auc,
    integrated_brier_score, EvaluationGrid,
};
use crate::rsf::{fit_forest, mean_chf_on_grid, RsfParams, SurvivalForest, SurvivalTree};

/// How clients weight their trees when filling a quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Uniform,
    Concordance,
    ConcordanceIpcw,
    InverseIbs,
    CumulativeAuc,
}

impl SamplingStrategy {
    pub const ALL: [SamplingStrategy; 5] = [
        SamplingStrategy::Uniform,
        SamplingStrategy::Concordance,
        SamplingStrategy::ConcordanceIpcw,
        SamplingStrategy::InverseIbs,
        SamplingStrategy::CumulativeAuc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::Concordance => "concordance",
            SamplingStrategy::ConcordanceIpcw => "concordance_ipcw",
            SamplingStrategy::InverseIbs => "inverse_ibs",
            SamplingStrategy::CumulativeAuc => "cumulative_auc",
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SamplingStrategy::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown sampling strategy {s:?}; expected one of uniform, concordance, \
                     concordance_ipcw, inverse_ibs, cumulative_auc"
                ))
            })
    }
}

/// One participant: local data split into train/validation, and the model
/// state accumulated as the protocol advances.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub train: SurvivalDataset,
    pub validation: SurvivalDataset,
    pub forest: Option<SurvivalForest>,
    pub tree_weights: Option<Vec<f64>>,
}

impl ClientState {
    pub fn new(client_id: usize, train: SurvivalDataset, validation: SurvivalDataset) -> Self {
        Self {
            client_id,
            train,
            validation,
            forest: None,
            tree_weights: None,
        }
    }

    /// |D_k|: the client's full local data size.
    pub fn n_local(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    /// T_k once trained.
    pub fn n_trees(&self) -> usize {
        self.forest.as_ref().map_or(0, |f| f.trees.len())
    }
}

/// Train the client's local forest on its train partition.
pub fn local_train(client: &mut ClientState, params: &RsfParams) -> Result<()> {
    client.forest = Some(fit_forest(&client.train, params)?);
    Ok(())
}

/// Summed single-tree CHF over `grid` for every record — the tree-level
/// risk score (a tree is treated as a one-tree forest).
fn tree_risks(tree: &SurvivalTree, grid: &[f64], data: &SurvivalDataset) -> Result<Vec<f64>> {
    data.records
        .iter()
        .map(|r| Ok(tree.leaf_curve(&r.features)?.sample(grid).iter().sum()))
        .collect()
}

/// Per-record survival curves predicted by a single tree.
fn tree_survival_curves(
    tree: &SurvivalTree,
    grid: &[f64],
    data: &SurvivalDataset,
) -> Result<Vec<StepCurve>> {
    data.records
        .iter()
        .map(|r| {
            let trees = std::slice::from_ref(tree);
            chf_to_survival(&mean_chf_on_grid(trees, grid, &r.features)?)
        })
        .collect()
}

/// Turn raw per-tree IBS values into sampling weights: 1/IBS, with perfect
/// scores (IBS = 0) clamped to 10× the largest finite weight.
fn inverse_ibs_weights(ibs: &[Option<f64>]) -> Vec<Option<f64>> {
    let finite: Vec<f64> = ibs
        .iter()
        .filter_map(|v| *v)
        .filter(|&v| v > 0.0)
        .map(|v| 1.0 / v)
        .collect();
    let max_finite = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ibs.iter()
        .map(|v| match v {
            None => None,
            Some(x) if *x > 0.0 => Some(1.0 / x),
            Some(_) if finite.is_empty() => Some(1.0),
            Some(_) => Some(10.0 * max_finite),
        })
        .collect()
}

/// Fill undefined weights with the minimum defined weight; all undefined
/// falls back to uniform 1s.
fn resolve_undefined(weights: Vec<Option<f64>>) -> Vec<f64> {
    let min_defined = weights
        .iter()
        .filter_map(|w| *w)
        .fold(f64::INFINITY, f64::min);
    if min_defined.is_finite() {
        weights
            .into_iter()
            .map(|w| w.unwrap_or(min_defined))
            .collect()
    } else {
        vec![1.0; weights.len()]
    }
}

/// Score every local tree on the client's validation partition under the
/// given strategy. Trees whose metric is undefined (no comparable pairs,
/// degenerate censoring weights) get the minimum defined weight; when
/// nothing is defined the weights collapse to uniform.
pub fn evaluate_trees(client: &ClientState, strategy: SamplingStrategy) -> Result<Vec<f64>> {
    let forest = client
        .forest
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("client has no trained forest".into()))?;
    if client.validation.is_empty() {
        return Err(Error::InvalidInput(
            "client validation partition is empty".into(),
        ));
    }
    let n_trees = forest.trees.len();
    if strategy == SamplingStrategy::Uniform {
        return Ok(vec![1.0; n_trees]);
    }

    let grid = &forest.event_time_grid;
    let g_censor = censoring_km(&client.train);
    // IPCW strategies evaluate between the validation-time percentiles; if
    // no usable range exists every metric is undefined and the fallback
    // keeps the protocol alive with uniform weights.
    let eval_grid = EvaluationGrid::from_observed(&client.validation).ok();

    let metric_of = |tree: &SurvivalTree| -> Result<f64> {
        match strategy {
            SamplingStrategy::Uniform => unreachable!(),
            SamplingStrategy::Concordance => {
                concordance_index(&tree_risks(tree, grid, &client.validation)?, &client.validation)
            }
            SamplingStrategy::ConcordanceIpcw => {
                let eg = eval_grid
                    .as_ref()
                    .ok_or_else(|| Error::Undefined("no evaluation grid".into()))?;
                concordance_index_ipcw(
                    &tree_risks(tree, grid, &client.validation)?,
                    &client.validation,
                    &g_censor,
                    eg.tau,
                )
            }
            SamplingStrategy::InverseIbs => {
                let eg = eval_grid
                    .as_ref()
                    .ok_or_else(|| Error::Undefined("no evaluation grid".into()))?;
                integrated_brier_score(
                    &tree_survival_curves(tree, grid, &client.validation)?,
                    &client.validation,
                    eg,
                    &g_censor,
                )
            }
            SamplingStrategy::CumulativeAuc => {
                let eg = eval_grid
                    .as_ref()
                    .ok_or_else(|| Error::Undefined("no evaluation grid".into()))?;
                cumulative_auc(
                    &tree_risks(tree, grid, &client.validation)?,
                    &client.validation,
                    eg,
                    &g_censor,
                )
            }
        }
    };

    let mut raw: Vec<Option<f64>> = Vec::with_capacity(n_trees);
    for tree in &forest.trees {
        match metric_of(tree) {
            Ok(v) => raw.push(Some(v)),
            Err(e) if e.is_metric_undefined() => raw.push(None),
            Err(e) => return Err(e),
        }
    }
    if strategy == SamplingStrategy::InverseIbs {
        raw = inverse_ibs_weights(&raw);
    }
    Ok(resolve_undefined(raw))
}

/// The server's quota assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FederationPlan {
    /// Per-client (N_k, T_k) as supplied, in client order.
    pub loads: Vec<(usize, usize)>,
    /// Requested global ensemble size.
    pub target: usize,
    /// Assigned per-client quotas T′_k.
    pub quotas: Vec<usize>,
}

impl FederationPlan {
    pub fn total_assigned(&self) -> usize {
        self.quotas.iter().sum()
    }
}

/// Assign tree quotas: run min(target, ΣT_k) iterations, each picking an
/// unsaturated client with probability proportional to its N_k and
/// incrementing its quota. A target above ΣT_k is satisfied as far as
/// possible, with a warning.
pub fn assign_tree_counts<R: Rng>(
    loads: &[(usize, usize)],
    target: usize,
    rng: &mut R,
) -> Result<FederationPlan> {
    if loads.is_empty() {
        return Err(Error::InvalidInput("no clients to plan for".into()));
    }
    if target == 0 {
        return Err(Error::InvalidInput("ensemble target must be >= 1".into()));
    }
    if loads.iter().any(|&(n, _)| n == 0) {
        return Err(Error::InvalidInput(
            "every client must hold at least one record".into(),
        ));
    }
    let capacity: usize = loads.iter().map(|&(_, t)| t).sum();
    if target > capacity {
        log::warn!(
            "ensemble target {target} exceeds total client capacity {capacity}; \
             assigning {capacity}"
        );
    }
    let mut quotas = vec![0usize; loads.len()];
    for _ in 0..target.min(capacity) {
        let weight_sum: u64 = loads
            .iter()
            .zip(&quotas)
            .filter(|((_, t_k), q)| **q < *t_k)
            .map(|((n_k, _), _)| *n_k as u64)
            .sum();
        let draw = rng.gen_range(0..weight_sum);
        let mut acc = 0u64;
        for (k, ((n_k, t_k), quota)) in loads.iter().zip(&mut quotas).enumerate() {
            if *quota >= *t_k {
                continue;
            }
            acc += *n_k as u64;
            if draw < acc {
                quotas[k] += 1;
                break;
            }
        }
    }
    Ok(FederationPlan {
        loads: loads.to_vec(),
        target,
        quotas,
    })
}

/// Draw `quota` distinct trees without replacement, each draw proportional
/// to the remaining weights. All-zero remaining mass degrades to a uniform
/// draw; negative weights are rejected outright.
pub fn sample_trees<R: Rng>(
    client: &ClientState,
    quota: usize,
    rng: &mut R,
) -> Result<Vec<SurvivalTree>> {
    let forest = client
        .forest
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("client has no trained forest".into()))?;
    let weights = client
        .tree_weights
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("client trees are unweighted".into()))?;
    let t_k = forest.trees.len();
    if weights.len() != t_k {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} trees",
            weights.len(),
            t_k
        )));
    }
    if quota > t_k {
        return Err(Error::InvalidInput(format!(
            "quota {quota} exceeds local tree count {t_k}"
        )));
    }
    if let Some(w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tree weights must be finite and non-negative, got {w}"
        )));
    }

    let mut remaining: Vec<usize> = (0..t_k).collect();
    let mut picked = Vec::with_capacity(quota);
    for _ in 0..quota {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pos = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = None;
            for (pos, &i) in remaining.iter().enumerate() {
                if weights[i] > 0.0 {
                    last_positive = Some(pos);
                }
                acc += weights[i];
                if acc > u {
                    chosen = Some(pos);
                    break;
                }
            }
            // Rounding can leave the accumulated total a hair below u;
            // the draw then belongs to the last positive-weight tree.
            chosen.or(last_positive).expect("positive total mass")
        } else {
            rng.gen_range(0..remaining.len())
        };
        picked.push(remaining.remove(pos));
    }
    Ok(picked.iter().map(|&i| forest.trees[i].clone()).collect())
}

/// One client's contribution to the merged ensemble.
#[derive(Debug, Clone)]
pub struct ClientContribution {
    pub client_id: usize,
    pub trees: Vec<SurvivalTree>,
    /// The client forest's event-time grid.
    pub grid: Vec<f64>,
}

/// Concatenate client contributions (ordered by client id, preserving each
/// client's local order) into a global forest over the union grid.
pub fn merge_ensemble(contributions: &[ClientContribution]) -> Result<SurvivalForest> {
    let mut sorted: Vec<&ClientContribution> = contributions.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    for pair in sorted.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::InvalidInput(format!(
                "duplicate client id {} in merge",
                pair[0].client_id
            )));
        }
    }

    let mut trees: Vec<SurvivalTree> = Vec::new();
    let mut grid: Vec<f64> = Vec::new();
    for c in &sorted {
        trees.extend(c.trees.iter().cloned());
        grid.extend_from_slice(&c.grid);
    }
    if trees.is_empty() {
        return Err(Error::InvalidInput("no trees to merge".into()));
    }
    let d = trees[0].n_features;
    if trees.iter().any(|t| t.n_features != d) {
        return Err(Error::InvalidInput(
            "cannot merge trees with different feature dimensions".into(),
        ));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    Ok(SurvivalForest {
        trees,
        event_time_grid: grid,
        params: None,
    })
}

/// Run the whole protocol in process: train (where needed), score, plan,
/// sample, merge. Clients that fail to train or score are excluded with a
/// warning; the run fails only if nobody survives.
pub fn run_fedsurf<R: Rng>(
    clients: &mut [ClientState],
    params: &RsfParams,
    target: usize,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<SurvivalForest> {
    let mut surviving: Vec<usize> = Vec::new();
    for (i, client) in clients.iter_mut().enumerate() {
        if client.forest.is_none() {
            if let Err(e) = local_train(client, params) {
                log::warn!("client {} failed to train: {e}", client.client_id);
                continue;
            }
        }
        match evaluate_trees(client, strategy) {
            Ok(w) => {
                client.tree_weights = Some(w);
                surviving.push(i);
            }
            Err(e) => {
                log::warn!("client {} failed to score trees: {e}", client.client_id);
            }
        }
    }
    if surviving.is_empty() {
        return Err(Error::InvalidInput(
            "no client completed local training".into(),
        ));
    }

    let loads: Vec<(usize, usize)> = surviving
        .iter()
        .map(|&i| (clients[i].n_local(), clients[i].n_trees()))
        .collect();
    let plan = assign_tree_counts(&loads, target, rng)?;

    let mut contributions = Vec::new();
    for (&i, &quota) in surviving.iter().zip(&plan.quotas) {
        let client = &clients[i];
        let trees = sample_trees(client, quota, rng)?;
        contributions.push(ClientContribution {
            client_id: client.client_id,
            trees,
            grid: client.forest.as_ref().unwrap().event_time_grid.clone(),
        });
    }
    merge_ensemble(&contributions)
}
