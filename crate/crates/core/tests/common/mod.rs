//! Brute-force reference implementations of every estimator and metric,
//! written as direct formula transcriptions with no shared code paths with
//! the library. The equivalence battery generates small random datasets and
//! checks the library against these oracles term by term.

#![allow(dead_code)]

use fedsurf_core::{
    ClientState, Error, StepCurve, SurvivalDataset, SurvivalForest, SurvivalRecord, SurvivalTree,
    TreeNode,
};
use rand::Rng;

pub const TOL: f64 = 1e-12;
const MIN_G: f64 = 1e-12;

// ── Fixtures ─────────────────────────────────────────────────────────────

pub fn dataset_from(times: &[f64], events: &[bool]) -> SurvivalDataset {
    let records = times
        .iter()
        .zip(events)
        .map(|(&time, &event)| SurvivalRecord {
            features: vec![],
            event,
            time,
        })
        .collect();
    SurvivalDataset::new(records, vec![]).unwrap()
}

/// Random featureless dataset on a half-integer time lattice, so ties in
/// time occur constantly.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize) -> SurvivalDataset {
    let times: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=16) as f64 * 0.5).collect();
    let events: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    dataset_from(&times, &events)
}

/// Random risk scores on a lattice, so risk ties occur constantly.
pub fn random_risks<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0..=6) as f64 * 0.5).collect()
}

/// Random non-increasing survival step curve.
pub fn random_survival_curve<R: Rng>(rng: &mut R) -> StepCurve {
    let k = rng.gen_range(0..=3);
    let mut times: Vec<f64> = (0..k).map(|_| rng.gen_range(1..=16) as f64 * 0.5).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut values: Vec<f64> = times.iter().map(|_| rng.gen_range(0.0..=1.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    StepCurve::survival(times, values).unwrap()
}

// ── Estimator oracles ────────────────────────────────────────────────────

fn distinct_times(data: &SurvivalDataset) -> Vec<f64> {
    let mut times: Vec<f64> = data.records.iter().map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Product-limit survival probability at `t`, evaluated directly from the
/// definition: Π over distinct times u (≤ t, or < t with `left`) of
/// (1 − d(u)/r(u)). `flip` estimates the censoring distribution instead.
pub fn oracle_km_at(data: &SurvivalDataset, flip: bool, t: f64, left: bool) -> f64 {
    let mut s = 1.0;
    for u in distinct_times(data) {
        let included = if left { u < t } else { u <= t };
        if !included {
            break;
        }
        let d = data
            .records
            .iter()
            .filter(|r| r.time == u && r.event != flip)
            .count();
        let at_risk = data.records.iter().filter(|r| r.time >= u).count();
        s *= 1.0 - d as f64 / at_risk as f64;
        if s <= 0.0 {
            s = 0.0;
        }
    }
    s
}

/// Cumulative hazard at `t`: Σ over distinct times u ≤ t of d(u)/r(u).
pub fn oracle_na_at(data: &SurvivalDataset, t: f64) -> f64 {
    let mut h = 0.0;
    for u in distinct_times(data) {
        if u > t {
            break;
        }
        let d = data
            .records
            .iter()
            .filter(|r| r.time == u && r.event)
            .count();
        let at_risk = data.records.iter().filter(|r| r.time >= u).count();
        h += d as f64 / at_risk as f64;
    }
    h
}

/// Independent step-curve lookup: last stored value at or before `t`, or
/// the pre-value 1.0 for survival curves.
pub fn step_at(curve: &StepCurve, t: f64) -> f64 {
    let mut value = 1.0;
    for (u, v) in curve.times().iter().zip(curve.values()) {
        if *u <= t {
            value = *v;
        } else {
            break;
        }
    }
    value
}

// ── Metric oracles ───────────────────────────────────────────────────────

/// What a metric evaluation produced, for class-level comparison against
/// the library's error taxonomy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Value(f64),
    Undefined,
    Degenerate,
}

pub fn classify(result: Result<f64, Error>) -> Outcome {
    match result {
        Ok(v) => Outcome::Value(v),
        Err(Error::Undefined(_)) => Outcome::Undefined,
        Err(Error::DegenerateWeight(_)) => Outcome::Degenerate,
        Err(e) => panic!("unexpected error class: {e}"),
    }
}

/// Asserts two outcomes agree: same class, and values within `TOL`.
pub fn assert_agree(label: &str, library: Outcome, oracle: Outcome) {
    match (library, oracle) {
        (Outcome::Value(a), Outcome::Value(b)) => {
            assert!(
                (a - b).abs() <= TOL,
                "{label}: library {a} vs oracle {b} (diff {})",
                (a - b).abs()
            );
        }
        (a, b) => assert_eq!(a, b, "{label}: outcome class mismatch"),
    }
}

fn credit(anchor: f64, other: f64) -> f64 {
    if anchor > other {
        1.0
    } else if anchor == other {
        0.5
    } else {
        0.0
    }
}

fn g_left_or_degenerate(train: &SurvivalDataset, t: f64) -> Result<f64, Outcome> {
    let g = oracle_km_at(train, true, t, true);
    if g < MIN_G {
        Err(Outcome::Degenerate)
    } else {
        Ok(g)
    }
}

fn g_right_or_degenerate(train: &SurvivalDataset, t: f64) -> Result<f64, Outcome> {
    let g = oracle_km_at(train, true, t, false);
    if g < MIN_G {
        Err(Outcome::Degenerate)
    } else {
        Ok(g)
    }
}

pub fn oracle_concordance(risks: &[f64], test: &SurvivalDataset) -> Outcome {
    let n = test.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        if !test.records[i].event {
            continue;
        }
        for j in 0..n {
            if j != i && test.records[j].time > test.records[i].time {
                den += 1.0;
                num += credit(risks[i], risks[j]);
            }
        }
    }
    if den == 0.0 {
        Outcome::Undefined
    } else {
        Outcome::Value(num / den)
    }
}

pub fn oracle_concordance_ipcw(
    risks: &[f64],
    test: &SurvivalDataset,
    train: &SurvivalDataset,
    tau: f64,
) -> Outcome {
    let n = test.len();
    // Anchor weights are established up front; a degenerate censoring
    // estimate at any anchor aborts even when that anchor has no partner.
    let mut weight = vec![0.0; n];
    for i in 0..n {
        let r = &test.records[i];
        if r.event && r.time <= tau {
            match g_left_or_degenerate(train, r.time) {
                Ok(g) => weight[i] = 1.0 / (g * g),
                Err(out) => return out,
            }
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        if weight[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if j != i && test.records[j].time > test.records[i].time {
                den += weight[i];
                num += weight[i] * credit(risks[i], risks[j]);
            }
        }
    }
    if den == 0.0 {
        Outcome::Undefined
    } else {
        Outcome::Value(num / den)
    }
}

pub fn oracle_brier(
    surv_at_t: &[f64],
    test: &SurvivalDataset,
    train: &SurvivalDataset,
    t: f64,
) -> Outcome {
    let mut sum = 0.0;
    for (r, &s) in test.records.iter().zip(surv_at_t) {
        if r.time <= t && r.event {
            match g_left_or_degenerate(train, r.time) {
                Ok(g) => sum += s * s / g,
                Err(out) => return out,
            }
        } else if r.time > t {
            match g_right_or_degenerate(train, t) {
                Ok(g) => sum += (1.0 - s) * (1.0 - s) / g,
                Err(out) => return out,
            }
        }
    }
    Outcome::Value(sum / test.len() as f64)
}

pub fn oracle_ibs(
    curves: &[StepCurve],
    test: &SurvivalDataset,
    train: &SurvivalDataset,
    grid: &[f64],
) -> Outcome {
    let mut bs = Vec::with_capacity(grid.len());
    for &t in grid {
        let surv: Vec<f64> = curves.iter().map(|c| step_at(c, t)).collect();
        match oracle_brier(&surv, test, train, t) {
            Outcome::Value(v) => bs.push(v),
            other => return other,
        }
    }
    let mut integral = 0.0;
    for k in 0..bs.len() - 1 {
        integral += 0.5 * (bs[k] + bs[k + 1]) * (grid[k + 1] - grid[k]);
    }
    Outcome::Value(integral / (grid[grid.len() - 1] - grid[0]))
}

pub fn oracle_cumulative_auc(
    risks: &[f64],
    test: &SurvivalDataset,
    train: &SurvivalDataset,
    grid: &[f64],
) -> Outcome {
    let n = test.len();
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    let mut any_valid = false;

    for (k, &t) in grid.iter().enumerate() {
        let cases: Vec<usize> = (0..n)
            .filter(|&i| test.records[i].time <= t && test.records[i].event)
            .collect();
        let controls: Vec<usize> = (0..n).filter(|&i| test.records[i].time > t).collect();
        if cases.is_empty() || controls.is_empty() {
            continue;
        }
        let mut num = 0.0;
        let mut case_mass = 0.0;
        for &i in &cases {
            let w = match g_left_or_degenerate(train, test.records[i].time) {
                Ok(g) => 1.0 / g,
                Err(out) => return out,
            };
            case_mass += w;
            for &j in &controls {
                num += w * credit(risks[i], risks[j]);
            }
        }
        let auc_t = num / (case_mass * controls.len() as f64);

        let s_prev = if k == 0 {
            1.0
        } else {
            oracle_km_at(test, false, grid[k - 1], false)
        };
        let mass = s_prev - oracle_km_at(test, false, t, false);
        weighted_sum += auc_t * mass;
        weight_total += mass;
        any_valid = true;
    }

    if !any_valid || weight_total <= 0.0 {
        Outcome::Undefined
    } else {
        Outcome::Value(weighted_sum / weight_total)
    }
}

// ── The equivalence battery ──────────────────────────────────────────────

#[derive(Debug, Default)]
pub struct BatteryStats {
    pub datasets: usize,
    pub defined: [usize; 5],
    pub undefined: usize,
    pub degenerate: usize,
}

impl BatteryStats {
    fn tally(&mut self, outcome: Outcome, slot: usize) {
        match outcome {
            Outcome::Value(_) => self.defined[slot] += 1,
            Outcome::Undefined => self.undefined += 1,
            Outcome::Degenerate => self.degenerate += 1,
        }
    }
}

/// Runs `n_datasets` random small problems through every metric and both
/// estimators, asserting agreement with the oracles above. Returns tallies
/// so callers can verify the battery exercised the defined paths.
pub fn run_oracle_battery<R: Rng>(rng: &mut R, n_datasets: usize) -> BatteryStats {
    use fedsurf_core::{
        brier_score, censoring_km, concordance_index, concordance_index_ipcw, cumulative_auc,
        integrated_brier_score, kaplan_meier, nelson_aalen, EvaluationGrid,
    };

    let mut stats = BatteryStats {
        datasets: n_datasets,
        ..Default::default()
    };
    for case in 0..n_datasets {
        let n_test = rng.gen_range(2..=12);
        let n_train = rng.gen_range(3..=12);
        let test = random_dataset(rng, n_test);
        let train = random_dataset(rng, n_train);
        let risks = random_risks(rng, n_test);
        let label = |metric: &str| format!("case {case}, {metric}");

        // Estimators: exact agreement at step times, between steps, and at
        // the boundaries, for both indicator orientations.
        for data in [&test, &train] {
            let km = kaplan_meier(data, false);
            let gm = kaplan_meier(data, true);
            let na = nelson_aalen(data);
            let mut queries = vec![0.0, 0.25, 100.0];
            for t in distinct_times(data) {
                queries.extend([t - 0.25, t, t + 0.25]);
            }
            for &t in &queries {
                assert_eq!(km.eval(t), oracle_km_at(data, false, t, false), "{}", label("km"));
                assert_eq!(
                    km.eval_left(t),
                    oracle_km_at(data, false, t, true),
                    "{}",
                    label("km left")
                );
                assert_eq!(gm.eval(t), oracle_km_at(data, true, t, false), "{}", label("ĝ"));
                assert_eq!(na.eval(t), oracle_na_at(data, t), "{}", label("na"));
            }
        }

        // A valid strictly-increasing grid from the observed test times.
        let mut grid = distinct_times(&test);
        if grid.len() < 2 {
            grid.push(grid[0] + 0.5);
        }
        let tau = *grid.last().unwrap();
        let eval_grid = EvaluationGrid::new(grid.clone(), tau).unwrap();
        let g = censoring_km(&train);

        let lib = classify(concordance_index(&risks, &test));
        assert_agree(&label("concordance"), lib, oracle_concordance(&risks, &test));
        stats.tally(lib, 0);

        let lib = classify(concordance_index_ipcw(&risks, &test, &g, tau));
        assert_agree(
            &label("ipcw concordance"),
            lib,
            oracle_concordance_ipcw(&risks, &test, &train, tau),
        );
        stats.tally(lib, 1);

        let curves: Vec<StepCurve> = (0..n_test).map(|_| random_survival_curve(rng)).collect();
        let t_mid = grid[grid.len() / 2];
        let surv_mid: Vec<f64> = curves.iter().map(|c| step_at(c, t_mid)).collect();
        let lib = classify(brier_score(&surv_mid, &test, t_mid, &g));
        assert_agree(
            &label("brier"),
            lib,
            oracle_brier(&surv_mid, &test, &train, t_mid),
        );
        stats.tally(lib, 2);

        let lib = classify(integrated_brier_score(&curves, &test, &eval_grid, &g));
        assert_agree(
            &label("ibs"),
            lib,
            oracle_ibs(&curves, &test, &train, &grid),
        );
        stats.tally(lib, 3);

        let lib = classify(cumulative_auc(&risks, &test, &eval_grid, &g));
        assert_agree(
            &label("cumulative auc"),
            lib,
            oracle_cumulative_auc(&risks, &test, &train, &grid),
        );
        stats.tally(lib, 4);
    }
    stats
}

// ── Federation fixtures ──────────────────────────────────────────────────

/// A client whose forest is `t_k` single-leaf trees, where tree i's leaf
/// value encodes i so sampled trees stay identifiable.
pub fn fake_client(id: usize, t_k: usize, weights: &[f64]) -> ClientState {
    let trees: Vec<SurvivalTree> = (0..t_k)
        .map(|i| SurvivalTree {
            nodes: vec![TreeNode::Leaf {
                chf: StepCurve::hazard(vec![1.0], vec![(i + 1) as f64]).unwrap(),
                n_samples: 1,
            }],
            root: 0,
            bootstrap_seed: 0,
            n_features: 1,
        })
        .collect();
    let data = dataset_from(&[1.0, 2.0], &[true, false]);
    let mut client = ClientState::new(id, data.clone(), data);
    client.forest = Some(SurvivalForest {
        trees,
        event_time_grid: vec![1.0],
        params: None,
    });
    client.tree_weights = Some(weights.to_vec());
    client
}

/// Recovers the index encoded in a fake tree's leaf value.
pub fn tree_tag(tree: &SurvivalTree) -> usize {
    match &tree.nodes[0] {
        TreeNode::Leaf { chf, .. } => chf.values()[0] as usize - 1,
        _ => panic!("fake trees are single leaves"),
    }
}
