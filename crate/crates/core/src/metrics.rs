//! Evaluation of survival predictions on censored test data: Harrell's
//! concordance index, the IPCW (Uno) concordance index, the Brier score and
//! its time integral, and the cumulative/dynamic AUC.
//!
//! All IPCW metrics take the censoring-survival curve Ĝ explicitly. Which
//! data Ĝ is fitted on (pooled train vs per-client) is a policy question that
//! belongs to the caller; the experiment harness fits it on the pooled
//! training split so that Local/Federated/Global numbers stay comparable.

use crate::curve::StepCurve;
use crate::dataset::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimators::kaplan_meier;

/// Weights below this are treated as a degenerate censoring estimate and
/// rejected (hard error, never clamped).
const MIN_G: f64 = 1e-12;

/// Time grid used for integrated metrics, plus the truncation time for the
/// IPCW concordance index.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    pub times: Vec<f64>,
    pub tau: f64,
}

impl EvaluationGrid {
    pub fn new(times: Vec<f64>, tau: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidInput("evaluation grid is empty".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "evaluation grid times must be strictly increasing".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || !tau.is_finite() {
            return Err(Error::InvalidInput("evaluation grid must be finite".into()));
        }
        Ok(Self { times, tau })
    }

    /// Default grid: 100 equally spaced times between the 10th and 90th
    /// percentile of the observed test times, with tau at the 90th
    /// percentile. Clipping percentiles keeps Ĝ away from its unstable tail.
    pub fn from_observed(test: &SurvivalDataset) -> Result<Self> {
        if test.len() < 2 {
            return Err(Error::InvalidInput(
                "need at least 2 observed times to build a grid".into(),
            ));
        }
        let mut times = test.times();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = percentile(&times, 0.10);
        let hi = percentile(&times, 0.90);
        if !(hi > lo) {
            return Err(Error::InvalidInput(format!(
                "degenerate observed-time range: p10={lo}, p90={hi}"
            )));
        }
        let n = 100;
        let mut grid: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        grid.dedup();
        Self::new(grid, hi)
    }
}

/// Linear-interpolation percentile on a sorted slice (the convention used by
/// most numeric stacks: rank p·(n−1) interpolated between neighbors).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Kaplan–Meier estimate of the censoring distribution Ĝ(t): the event
/// indicator is flipped so "events" are censorings.
pub fn censoring_km(train: &SurvivalDataset) -> StepCurve {
    kaplan_meier(train, true)
}

/// Per-record IPCW weights anchored at event times: w_i = 1/Ĝ(t_i⁻) for
/// records with an observed event, 0 for censored records.
#[derive(Debug, Clone, PartialEq)]
pub struct IpcwWeights {
    pub weights: Vec<f64>,
}

impl IpcwWeights {
    pub fn event_anchored(test: &SurvivalDataset, g: &StepCurve) -> Result<Self> {
        let weights = test
            .records
            .iter()
            .map(|r| {
                if r.event {
                    g_left(g, r.time).map(|v| 1.0 / v)
                } else {
                    Ok(0.0)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { weights })
    }
}

fn g_left(g: &StepCurve, t: f64) -> Result<f64> {
    let v = g.eval_left(t);
    if v < MIN_G {
        return Err(Error::DegenerateWeight(format!(
            "censoring survival G(t-) = {v} at t = {t}"
        )));
    }
    Ok(v)
}

fn g_at(g: &StepCurve, t: f64) -> Result<f64> {
    let v = g.eval(t);
    if v < MIN_G {
        return Err(Error::DegenerateWeight(format!(
            "censoring survival G(t) = {v} at t = {t}"
        )));
    }
    Ok(v)
}

fn check_lengths(risks: &[f64], test: &SurvivalDataset) -> Result<()> {
    if risks.len() != test.len() {
        return Err(Error::InvalidInput(format!(
            "{} risks for {} records",
            risks.len(),
            test.len()
        )));
    }
    Ok(())
}

/// Rank credit of an ordered pair: the anchor (earlier event) should carry
/// the larger risk; ties get half credit.
fn pair_credit(risk_anchor: f64, risk_other: f64) -> f64 {
    if risk_anchor > risk_other {
        1.0
    } else if risk_anchor == risk_other {
        0.5
    } else {
        0.0
    }
}

/// Harrell's concordance index. A pair (i, j) is comparable iff the earlier
/// time belongs to an observed event; ties in time are not comparable.
pub fn concordance_index(risks: &[f64], test: &SurvivalDataset) -> Result<f64> {
    check_lengths(risks, test)?;
    let n = test.len();
    let mut concordant = 0.0;
    let mut comparable = 0.0;
    for i in 0..n {
        let ri = &test.records[i];
        if !ri.event {
            continue;
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            if test.records[j].time > ri.time {
                comparable += 1.0;
                concordant += pair_credit(risks[i], risks[j]);
            }
        }
    }
    if comparable == 0.0 {
        return Err(Error::Undefined("no comparable pairs".into()));
    }
    Ok(concordant / comparable)
}

/// Uno's IPCW concordance index: comparable pairs are anchored at event
/// times t_i ≤ tau and weighted by Ĝ(t_i⁻)^(−2).
pub fn concordance_index_ipcw(
    risks: &[f64],
    test: &SurvivalDataset,
    g: &StepCurve,
    tau: f64,
) -> Result<f64> {
    check_lengths(risks, test)?;
    let n = test.len();
    // Precompute anchor weights; fails fast if Ĝ degenerates before tau.
    let mut anchor_weight = vec![0.0; n];
    for i in 0..n {
        let r = &test.records[i];
        if r.event && r.time <= tau {
            let g_val = g_left(g, r.time)?;
            anchor_weight[i] = 1.0 / (g_val * g_val);
        }
    }
    let mut concordant = 0.0;
    let mut comparable = 0.0;
    for i in 0..n {
        let w = anchor_weight[i];
        if w == 0.0 {
            continue;
        }
        let ti = test.records[i].time;
        for j in 0..n {
            if j == i {
                continue;
            }
            if test.records[j].time > ti {
                comparable += w;
                concordant += w * pair_credit(risks[i], risks[j]);
            }
        }
    }
    if comparable == 0.0 {
        return Err(Error::Undefined("no comparable pairs under tau".into()));
    }
    Ok(concordant / comparable)
}

/// IPCW Brier score at a single time t, given each record's predicted
/// survival probability S_i(t).
///
/// BS(t) = (1/N) Σ_i [ 1(t_i ≤ t, δ_i=1)·S_i²/Ĝ(t_i⁻) + 1(t_i > t)·(1−S_i)²/Ĝ(t) ];
/// records censored at or before t contribute nothing.
pub fn brier_score(
    surv_at_t: &[f64],
    test: &SurvivalDataset,
    t: f64,
    g: &StepCurve,
) -> Result<f64> {
    if surv_at_t.len() != test.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} records",
            surv_at_t.len(),
            test.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if surv_at_t.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidInput(
            "survival probabilities must lie in [0, 1]".into(),
        ));
    }
    let mut sum = 0.0;
    for (r, &s) in test.records.iter().zip(surv_at_t) {
        if r.time <= t && r.event {
            sum += s * s / g_left(g, r.time)?;
        } else if r.time > t {
            sum += (1.0 - s) * (1.0 - s) / g_at(g, t)?;
        }
    }
    Ok(sum / test.len() as f64)
}

/// Integrated Brier score: trapezoidal integral of BS(t) over the grid,
/// normalized by the grid span.
pub fn integrated_brier_score(
    model_curves: &[StepCurve],
    test: &SurvivalDataset,
    grid: &EvaluationGrid,
    g: &StepCurve,
) -> Result<f64> {
    if model_curves.len() != test.len() {
        return Err(Error::InvalidInput(format!(
            "{} curves for {} records",
            model_curves.len(),
            test.len()
        )));
    }
    if grid.times.len() < 2 {
        return Err(Error::InvalidInput(
            "integrated Brier score needs at least 2 grid times".into(),
        ));
    }
    let mut bs = Vec::with_capacity(grid.times.len());
    let mut surv = vec![0.0; model_curves.len()];
    for &t in &grid.times {
        for (slot, curve) in surv.iter_mut().zip(model_curves) {
            *slot = curve.eval(t);
        }
        bs.push(brier_score(&surv, test, t, g)?);
    }
    let mut integral = 0.0;
    for k in 0..bs.len() - 1 {
        integral += 0.5 * (bs[k] + bs[k + 1]) * (grid.times[k + 1] - grid.times[k]);
    }
    let span = grid.times[grid.times.len() - 1] - grid.times[0];
    Ok(integral / span)
}

/// Cumulative/dynamic AUC.
///
/// At each grid time t, cases are records with an observed event at or
/// before t (weighted 1/Ĝ(t_i⁻)) and controls are records still at risk
/// after t; AUC(t) is the weighted probability that a case outranks a
/// control (risk ties get half credit). Grid times lacking cases or
/// controls are skipped. The cumulative value averages AUC(t) under the
/// case-probability measure dŜ estimated from the test set:
/// Σ AUC(t_k)·[Ŝ(t_{k−1})−Ŝ(t_k)] normalized over the retained grid times.
pub fn cumulative_auc(
    risks: &[f64],
    test: &SurvivalDataset,
    grid: &EvaluationGrid,
    g: &StepCurve,
) -> Result<f64> {
    check_lengths(risks, test)?;
    let s_hat = kaplan_meier(test, false);
    let n = test.len();

    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    let mut any_valid = false;

    for (k, &t) in grid.times.iter().enumerate() {
        let mut cases: Vec<usize> = Vec::new();
        let mut controls: Vec<usize> = Vec::new();
        for i in 0..n {
            let r = &test.records[i];
            if r.time <= t && r.event {
                cases.push(i);
            } else if r.time > t {
                controls.push(i);
            }
        }
        if cases.is_empty() || controls.is_empty() {
            continue;
        }
        let mut num = 0.0;
        let mut case_mass = 0.0;
        for &i in &cases {
            let w = 1.0 / g_left(g, test.records[i].time)?;
            case_mass += w;
            for &j in &controls {
                num += w * pair_credit(risks[i], risks[j]);
            }
        }
        let auc_t = num / (case_mass * controls.len() as f64);

        let s_prev = if k == 0 { 1.0 } else { s_hat.eval(grid.times[k - 1]) };
        let mass = s_prev - s_hat.eval(t);
        weighted_sum += auc_t * mass;
        weight_total += mass;
        any_valid = true;
    }

    if !any_valid {
        return Err(Error::Undefined(
            "no grid time has both cases and controls".into(),
        ));
    }
    if weight_total <= 0.0 {
        return Err(Error::Undefined(
            "case-probability measure has no mass on the grid".into(),
        ));
    }
    Ok(weighted_sum / weight_total)
}
