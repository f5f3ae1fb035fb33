//! Random survival forests: bagged binary survival trees that pick splits
//! by maximizing the two-sample log-rank statistic and store Nelson–Aalen
//! cumulative-hazard curves in their leaves. Prediction averages the leaf
//! curves over the forest's event-time grid; the scalar risk score is the
//! summed ensemble CHF.

mod split;

pub use split::{best_split, logrank_statistic};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::curve::StepCurve;
use crate::dataset::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimators::{chf_to_survival, nelson_aalen};
use crate::seeds::{derive, stream};

/// Number of candidate features examined per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxFeatures {
    /// ⌊√F⌋, at least 1 — the usual forest default.
    #[default]
    Sqrt,
    /// A fixed count (clamped to the number of features).
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::Fixed(m) => (*m).min(n_features).max(1),
        }
    }
}

impl Serialize for MaxFeatures {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaxFeatures::Sqrt => serializer.serialize_str("sqrt"),
            MaxFeatures::Fixed(m) => serializer.serialize_u64(*m as u64),
        }
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = MaxFeatures;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("\"sqrt\" or a positive integer")
            }
            fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<MaxFeatures, E> {
                if s == "sqrt" {
                    Ok(MaxFeatures::Sqrt)
                } else {
                    Err(E::custom(format!("unknown max_features policy {s:?}")))
                }
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<MaxFeatures, E> {
                if v >= 1 {
                    Ok(MaxFeatures::Fixed(v as usize))
                } else {
                    Err(E::custom("max_features must be >= 1"))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<MaxFeatures, E> {
                if v >= 1 {
                    Ok(MaxFeatures::Fixed(v as usize))
                } else {
                    Err(E::custom("max_features must be >= 1"))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// Forest hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RsfParams {
    pub n_trees: usize,
    /// `None` grows trees until the stopping rules bite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_samples_split")]
    pub min_samples_split: usize,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub max_features: MaxFeatures,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_samples_split() -> usize {
    6
}
fn default_min_samples_leaf() -> usize {
    3
}

impl RsfParams {
    pub fn new(n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            max_depth: None,
            min_samples_split: default_min_samples_split(),
            min_samples_leaf: default_min_samples_leaf(),
            max_features: MaxFeatures::Sqrt,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidInput("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidInput("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidInput("min_samples_leaf must be >= 1".into()));
        }
        if let MaxFeatures::Fixed(0) = self.max_features {
            return Err(Error::InvalidInput("max_features must be >= 1".into()));
        }
        Ok(())
    }
}

/// One node of a survival tree. Internal nodes route x left iff
/// x[feature] ≤ threshold; leaves hold the Nelson–Aalen CHF of their
/// in-bootstrap samples.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        chf: StepCurve,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub bootstrap_seed: u64,
    /// Feature dimension the tree was trained on; routing validates against
    /// it.
    pub n_features: usize,
}

impl SurvivalTree {
    /// Route a feature vector to its leaf CHF curve.
    pub fn leaf_curve(&self, x: &[f64]) -> Result<&StepCurve> {
        if x.len() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "feature vector has length {}, tree expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { chf, .. } => return Ok(chf),
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, self.root)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalForest {
    pub trees: Vec<SurvivalTree>,
    /// Sorted union of training event times; all predictions are sampled on
    /// this grid.
    pub event_time_grid: Vec<f64>,
    /// Training parameters; a forest merged from federated contributions
    /// has none.
    pub params: Option<RsfParams>,
}

impl SurvivalForest {
    /// Pointwise-mean cumulative hazard over all trees.
    pub fn predict_chf(&self, x: &[f64]) -> Result<StepCurve> {
        mean_chf_on_grid(&self.trees, &self.event_time_grid, x)
    }

    pub fn predict_survival(&self, x: &[f64]) -> Result<StepCurve> {
        chf_to_survival(&self.predict_chf(x)?)
    }

    /// Scalar risk: the ensemble CHF summed over the event-time grid.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_chf(x)?.values().iter().sum())
    }

    pub fn risk_scores(&self, data: &SurvivalDataset) -> Result<Vec<f64>> {
        data.records
            .par_iter()
            .map(|r| self.risk_score(&r.features))
            .collect()
    }

    pub fn survival_curves(&self, data: &SurvivalDataset) -> Result<Vec<StepCurve>> {
        data.records
            .par_iter()
            .map(|r| self.predict_survival(&r.features))
            .collect()
    }
}

/// Mean CHF of a tree subset, sampled on `grid`.
pub fn mean_chf_on_grid(trees: &[SurvivalTree], grid: &[f64], x: &[f64]) -> Result<StepCurve> {
    if trees.is_empty() {
        return Err(Error::InvalidInput("no trees to predict with".into()));
    }
    let mut acc = vec![0.0; grid.len()];
    for tree in trees {
        tree.leaf_curve(x)?.accumulate_onto(grid, &mut acc);
    }
    let t = trees.len() as f64;
    for v in &mut acc {
        *v /= t;
    }
    StepCurve::hazard(grid.to_vec(), acc)
}

/// Draw `m` distinct feature indices uniformly (partial Fisher–Yates),
/// returned ascending so candidate scan order is deterministic.
fn draw_features<R: Rng>(rng: &mut R, n_features: usize, m: usize) -> Vec<usize> {
    let m = m.min(n_features);
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n_features);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool.sort_unstable();
    pool
}

fn check_trainable(data: &SurvivalDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if data.n_events() == 0 {
        return Err(Error::InvalidInput(
            "cannot train on a dataset with no observed events".into(),
        ));
    }
    Ok(())
}

/// Fit one survival tree on a bootstrap resample of `data`, with all
/// randomness drawn from a stream seeded by `seed` (stored on the tree).
pub fn fit_tree(data: &SurvivalDataset, params: &RsfParams, seed: u64) -> Result<SurvivalTree> {
    params.validate()?;
    check_trainable(data)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = data.len();

    // Bootstrap; an event-free draw is redrawn up to 10 times, then the
    // full dataset is used verbatim.
    let mut bootstrap: Vec<usize> = Vec::new();
    for attempt in 0..=10 {
        bootstrap = (0..n).map(|_| rng.gen_range(0..n)).collect();
        if bootstrap.iter().any(|&i| data.records[i].event) {
            break;
        }
        if attempt == 10 {
            bootstrap = (0..n).collect();
        }
    }

    let max_features = params.max_features.resolve(data.n_features());
    let mut nodes = Vec::new();
    let root = grow(data, params, max_features, &bootstrap, 0, &mut rng, &mut nodes);
    Ok(SurvivalTree {
        nodes,
        root,
        bootstrap_seed: seed,
        n_features: data.n_features(),
    })
}

fn grow<R: Rng>(
    data: &SurvivalDataset,
    params: &RsfParams,
    max_features: usize,
    samples: &[usize],
    depth: usize,
    rng: &mut R,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let leaf = |nodes: &mut Vec<TreeNode>| {
        let chf = nelson_aalen(&data.subset(samples));
        nodes.push(TreeNode::Leaf {
            chf,
            n_samples: samples.len(),
        });
        nodes.len() - 1
    };

    let depth_allows = params.max_depth.map_or(true, |d| depth < d);
    if samples.len() < params.min_samples_split || !depth_allows {
        return leaf(nodes);
    }

    let candidates = draw_features(rng, data.n_features(), max_features);
    let node_data = data.subset(samples);
    let Some((feature, threshold, _)) =
        best_split(&node_data, &candidates, params.min_samples_leaf)
    else {
        return leaf(nodes);
    };

    let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
        .iter()
        .copied()
        .partition(|&i| data.records[i].features[feature] <= threshold);

    nodes.push(TreeNode::Leaf {
        // Placeholder, overwritten once both subtrees exist.
        chf: StepCurve::hazard(vec![], vec![]).expect("empty hazard curve"),
        n_samples: 0,
    });
    let id = nodes.len() - 1;
    let left = grow(data, params, max_features, &left_samples, depth + 1, rng, nodes);
    let right = grow(data, params, max_features, &right_samples, depth + 1, rng, nodes);
    nodes[id] = TreeNode::Internal {
        feature,
        threshold,
        left,
        right,
    };
    id
}

/// Fit a forest of `params.n_trees` trees in parallel; per-tree seeds are
/// derived from `params.seed` so the result is identical at any thread
/// count.
pub fn fit_forest(data: &SurvivalDataset, params: &RsfParams) -> Result<SurvivalForest> {
    params.validate()?;
    check_trainable(data)?;
    let tree_stream = derive(params.seed, stream::TREE);
    let trees: Result<Vec<SurvivalTree>> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(data, params, derive(tree_stream, t as u64)))
        .collect();
    Ok(SurvivalForest {
        trees: trees?,
        event_time_grid: data.event_times(),
        params: Some(params.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SurvivalRecord;
    use crate::datasplit::synth_survival;

    fn train_data(n: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        synth_survival(n, 4, 0.25, &mut rng).unwrap()
    }

    fn small_params(n_trees: usize, seed: u64) -> RsfParams {
        RsfParams {
            n_trees,
            max_depth: None,
            min_samples_split: 6,
            min_samples_leaf: 3,
            max_features: MaxFeatures::Sqrt,
            seed,
        }
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(1), 1);
        assert_eq!(MaxFeatures::Sqrt.resolve(4), 2);
        assert_eq!(MaxFeatures::Sqrt.resolve(10), 3);
        assert_eq!(MaxFeatures::Fixed(7).resolve(4), 4);
        assert_eq!(MaxFeatures::Fixed(2).resolve(10), 2);
    }

    #[test]
    fn stump_depth_is_bounded() {
        let data = train_data(120, 1);
        let mut params = small_params(1, 5);
        params.max_depth = Some(1);
        let tree = fit_tree(&data, &params, 77).unwrap();
        assert!(tree.nodes.len() <= 3);
        assert!(tree.depth() <= 1);
    }

    #[test]
    fn tiny_data_yields_single_leaf() {
        // N < min_samples_split stops immediately at the root.
        let records = vec![
            SurvivalRecord { features: vec![0.1], event: true, time: 1.0 },
            SurvivalRecord { features: vec![0.4], event: false, time: 2.0 },
            SurvivalRecord { features: vec![0.9], event: false, time: 3.0 },
        ];
        let data = SurvivalDataset::new(records, vec!["x0".into()]).unwrap();
        let tree = fit_tree(&data, &small_params(1, 3), 11).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        match &tree.nodes[tree.root] {
            TreeNode::Leaf { chf, n_samples } => {
                assert_eq!(*n_samples, 3);
                // Leaf curve is the Nelson–Aalen of the bootstrap multiset,
                // reconstructed here with the same redraw-on-no-event rule.
                let mut rng = ChaCha12Rng::seed_from_u64(11);
                let mut boot: Vec<usize> = Vec::new();
                for attempt in 0..=10 {
                    boot = (0..3).map(|_| rng.gen_range(0..3)).collect();
                    if boot.contains(&0) {
                        break;
                    }
                    if attempt == 10 {
                        boot = vec![0, 1, 2];
                    }
                }
                let expected = nelson_aalen(&data.subset(&boot));
                assert_eq!(chf, &expected);
            }
            _ => panic!("expected a leaf"),
        }
    }

    #[test]
    fn fit_tree_is_deterministic() {
        let data = train_data(150, 2);
        let params = small_params(1, 9);
        let a = fit_tree(&data, &params, 123).unwrap();
        let b = fit_tree(&data, &params, 123).unwrap();
        assert_eq!(a, b);
        let c = fit_tree(&data, &params, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fit_tree_rejects_eventless_data() {
        let records = vec![
            SurvivalRecord { features: vec![0.0], event: false, time: 1.0 },
            SurvivalRecord { features: vec![1.0], event: false, time: 2.0 },
        ];
        let data = SurvivalDataset::new(records, vec!["x0".into()]).unwrap();
        assert!(fit_tree(&data, &small_params(1, 0), 5).is_err());
    }

    #[test]
    fn leaves_respect_min_samples_leaf() {
        let data = train_data(200, 3);
        let params = small_params(1, 21);
        let tree = fit_tree(&data, &params, 42).unwrap();
        for node in &tree.nodes {
            if let TreeNode::Leaf { n_samples, .. } = node {
                assert!(*n_samples >= params.min_samples_leaf);
            }
        }
        assert!(tree.n_leaves() > 1, "expected the tree to actually split");
    }

    #[test]
    fn forest_matches_sequential_tree_fits() {
        let data = train_data(80, 4);
        let params = small_params(8, 31);
        let forest = fit_forest(&data, &params).unwrap();
        assert_eq!(forest.trees.len(), 8);
        let tree_stream = derive(params.seed, stream::TREE);
        for (t, tree) in forest.trees.iter().enumerate() {
            let expected = fit_tree(&data, &params, derive(tree_stream, t as u64)).unwrap();
            assert_eq!(tree, &expected);
        }
        // Distinct bootstrap seeds per tree.
        let mut seeds: Vec<u64> = forest.trees.iter().map(|t| t.bootstrap_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn forest_is_reproducible() {
        let data = train_data(80, 5);
        let params = small_params(5, 77);
        let a = fit_forest(&data, &params).unwrap();
        let b = fit_forest(&data, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_grid_is_training_event_times() {
        let data = train_data(60, 6);
        let forest = fit_forest(&data, &small_params(3, 1)).unwrap();
        assert_eq!(forest.event_time_grid, data.event_times());
        assert!(forest
            .event_time_grid
            .windows(2)
            .all(|w| w[1] > w[0]));
    }

    #[test]
    fn single_tree_forest_predicts_leaf_curve() {
        let data = train_data(70, 7);
        let params = small_params(1, 13);
        let forest = fit_forest(&data, &params).unwrap();
        let x = &data.records[0].features;
        let chf = forest.predict_chf(x).unwrap();
        let leaf = forest.trees[0].leaf_curve(x).unwrap();
        for (i, &t) in forest.event_time_grid.iter().enumerate() {
            assert!((chf.values()[i] - leaf.eval(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_tree_prediction_is_pointwise_mean() {
        let data = train_data(90, 8);
        let forest = fit_forest(&data, &small_params(2, 19)).unwrap();
        let x = &data.records[5].features;
        let mean = forest.predict_chf(x).unwrap();
        let a = forest.trees[0].leaf_curve(x).unwrap();
        let b = forest.trees[1].leaf_curve(x).unwrap();
        for (i, &t) in forest.event_time_grid.iter().enumerate() {
            let want = 0.5 * (a.eval(t) + b.eval(t));
            assert!((mean.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn prediction_is_monotone_from_zero() {
        let data = train_data(100, 9);
        let forest = fit_forest(&data, &small_params(4, 3)).unwrap();
        for r in data.records.iter().take(10) {
            let chf = forest.predict_chf(&r.features).unwrap();
            let vals = chf.values();
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
            assert!(vals[0] >= 0.0);
            let surv = forest.predict_survival(&r.features).unwrap();
            assert!(surv.values().iter().all(|&s| (0.0..=1.0).contains(&s)));
        }
    }

    #[test]
    fn risk_score_sums_the_grid() {
        let data = train_data(60, 10);
        let forest = fit_forest(&data, &small_params(3, 8)).unwrap();
        let x = &data.records[2].features;
        let chf = forest.predict_chf(x).unwrap();
        let expected: f64 = chf.values().iter().sum();
        assert_eq!(forest.risk_score(x).unwrap(), expected);
        // Dominance: a curve pointwise above another cannot rank lower.
        let risks = forest.risk_scores(&data).unwrap();
        assert_eq!(risks.len(), data.len());
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let data = train_data(50, 11);
        let forest = fit_forest(&data, &small_params(1, 2)).unwrap();
        assert!(forest.predict_chf(&[1.0]).is_err());
        assert!(forest.risk_score(&[0.0; 9]).is_err());
    }

    #[test]
    fn forest_prediction_associates_over_tree_partition() {
        // Mean over all trees == mean of the two half-forest means.
        let data = train_data(64, 12);
        let forest = fit_forest(&data, &small_params(6, 91)).unwrap();
        let x = &data.records[1].features;
        let full = forest.predict_chf(x).unwrap();
        let first = mean_chf_on_grid(&forest.trees[..3], &forest.event_time_grid, x).unwrap();
        let second = mean_chf_on_grid(&forest.trees[3..], &forest.event_time_grid, x).unwrap();
        for i in 0..forest.event_time_grid.len() {
            let want = 0.5 * (first.values()[i] + second.values()[i]);
            assert!((full.values()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn params_validation() {
        assert!(small_params(0, 0).validate().is_err());
        let mut p = small_params(1, 0);
        p.min_samples_split = 1;
        assert!(p.validate().is_err());
        let mut p = small_params(1, 0);
        p.min_samples_leaf = 0;
        assert!(p.validate().is_err());
        let mut p = small_params(1, 0);
        p.max_depth = Some(0);
        assert!(p.validate().is_err());
        assert!(small_params(1, 0).validate().is_ok());
    }

    #[test]
    fn params_toml_round_trip() {
        let p = RsfParams {
            n_trees: 400,
            max_depth: Some(1),
            min_samples_split: 6,
            min_samples_leaf: 3,
            max_features: MaxFeatures::Sqrt,
            seed: 42,
        };
        let text = toml::to_string(&p).unwrap();
        let back: RsfParams = toml::from_str(&text).unwrap();
        assert_eq!(p, back);
        // Defaults fill in when omitted; "sqrt" and integers both parse.
        let parsed: RsfParams = toml::from_str("n_trees = 10").unwrap();
        assert_eq!(parsed.min_samples_split, 6);
        assert_eq!(parsed.min_samples_leaf, 3);
        assert_eq!(parsed.max_features, MaxFeatures::Sqrt);
        assert_eq!(parsed.max_depth, None);
        let parsed: RsfParams =
            toml::from_str("n_trees = 10\nmax_features = 4").unwrap();
        assert_eq!(parsed.max_features, MaxFeatures::Fixed(4));
    }
}
