//! Nonparametric estimators on censored data: Kaplan–Meier product-limit
//! survival curves, Nelson–Aalen cumulative hazards, and the exp(−H)
//! conversion between them.

use crate::curve::{CurveKind, StepCurve};
use crate::dataset::{build_risk_table, SurvivalDataset};
use crate::error::{Error, Result};

/// Kaplan–Meier product-limit estimate of the survival function.
///
/// The returned curve steps at each event time t_j to
/// Π_{t_i ≤ t_j} (1 − d_i / r_i), so evaluating it with the strict-inequality
/// convention Ŝ(t) = Π_{j: t_j < t} (…) is exactly [`StepCurve::eval_left`],
/// while `eval` gives the usual right-continuous plot.
///
/// With `use_censoring_as_event` the flipped indicator estimates the
/// censoring distribution Ĝ instead (the IPCW denominator).
pub fn kaplan_meier(data: &SurvivalDataset, use_censoring_as_event: bool) -> StepCurve {
    let table = build_risk_table(data, use_censoring_as_event);
    let mut s = 1.0;
    let values: Vec<f64> = table
        .event_times
        .iter()
        .enumerate()
        .map(|(j, _)| {
            s *= 1.0 - table.deaths[j] as f64 / table.at_risk[j] as f64;
            // Guard against -0.0 and 1-ulp drift below zero from the product.
            if s <= 0.0 {
                s = 0.0;
            }
            s
        })
        .collect();
    StepCurve::survival(table.event_times, values)
        .expect("product-limit values are monotone in [0,1] by construction")
}

/// Nelson–Aalen estimate of the cumulative hazard: Ĥ(t) = Σ_{t_j ≤ t} d_j/r_j.
pub fn nelson_aalen(data: &SurvivalDataset) -> StepCurve {
    let table = build_risk_table(data, false);
    let mut h = 0.0;
    let values: Vec<f64> = table
        .event_times
        .iter()
        .enumerate()
        .map(|(j, _)| {
            h += table.deaths[j] as f64 / table.at_risk[j] as f64;
            h
        })
        .collect();
    StepCurve::hazard(table.event_times, values)
        .expect("hazard increments are non-negative by construction")
}

/// Converts a cumulative-hazard curve to a survival curve via S(t) = exp(−H(t)).
pub fn chf_to_survival(h: &StepCurve) -> Result<StepCurve> {
    if h.kind() != CurveKind::Hazard {
        return Err(Error::InvalidInput(
            "chf_to_survival expects a hazard-typed curve".into(),
        ));
    }
    // Hazard validation already rejects negatives; keep the check explicit so
    // a hand-built curve that bypassed the constructor still fails loudly.
    if h.values().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput(
            "cumulative hazard contains negative values".into(),
        ));
    }
    let values = h.values().iter().map(|&v| (-v).exp()).collect();
    StepCurve::survival(h.times().to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SurvivalRecord;

    fn toy(times: &[f64], events: &[bool]) -> SurvivalDataset {
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

    #[test]
    fn km_all_censored_is_one() {
        let s = kaplan_meier(&toy(&[1.0, 2.0, 3.0], &[false, false, false]), false);
        assert_eq!(s.eval(0.5), 1.0);
        assert_eq!(s.eval(100.0), 1.0);
    }

    #[test]
    fn km_three_events() {
        // S = 2/3 on [1,2), 1/3 on [2,3), 0 on [3,inf)
        let s = kaplan_meier(&toy(&[1.0, 2.0, 3.0], &[true, true, true]), false);
        assert!((s.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.eval(1.9) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.eval(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.eval(3.0), 0.0);
        // Strict-inequality convention: Ŝ(t) with product over t_j < t.
        assert_eq!(s.eval_left(1.0), 1.0);
        assert!((s.eval_left(2.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn km_censored_row_only_shrinks_risk_set() {
        // S = 2/3 on [1,3), 0 on [3,inf): at t=3 the risk set is just row 3.
        let s = kaplan_meier(&toy(&[1.0, 2.0, 3.0], &[true, false, true]), false);
        assert!((s.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.eval(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.eval(3.0), 0.0);
    }

    #[test]
    fn na_three_rows_one_censored() {
        // H = 1/3 on [1,3), then 1/3 + 1/1 = 4/3 on [3,inf)
        let h = nelson_aalen(&toy(&[1.0, 2.0, 3.0], &[true, false, true]));
        assert!((h.eval(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((h.eval(2.9) - 1.0 / 3.0).abs() < 1e-15);
        assert!((h.eval(3.0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.eval(0.5), 0.0);
    }

    #[test]
    fn na_pools_tied_events() {
        // d=2, r=2 at t=1 -> H = 1 from t=1 on.
        let h = nelson_aalen(&toy(&[1.0, 1.0], &[true, true]));
        assert_eq!(h.times(), &[1.0]);
        assert!((h.eval(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn na_all_censored_is_zero() {
        let h = nelson_aalen(&toy(&[1.0, 2.0], &[false, false]));
        assert_eq!(h.eval(5.0), 0.0);
    }

    #[test]
    fn chf_to_survival_identity_and_step() {
        let h0 = StepCurve::hazard(vec![], vec![]).unwrap();
        let s0 = chf_to_survival(&h0).unwrap();
        assert_eq!(s0.eval(7.0), 1.0);

        let h = StepCurve::hazard(vec![1.0], vec![std::f64::consts::LN_2]).unwrap();
        let s = chf_to_survival(&h).unwrap();
        assert_eq!(s.eval(0.5), 1.0);
        assert!((s.eval(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chf_to_survival_rejects_wrong_kind() {
        let s = StepCurve::survival(vec![1.0], vec![0.5]).unwrap();
        assert!(chf_to_survival(&s).is_err());
    }

    #[test]
    fn km_ends_at_zero_when_max_time_is_an_event() {
        let s = kaplan_meier(&toy(&[2.0, 5.0, 9.0], &[false, true, true]), false);
        assert_eq!(s.eval(9.0), 0.0);
    }

    #[test]
    fn exp_neg_na_dominates_km_without_censoring() {
        // exp(-H) >= S pointwise (1 - x <= exp(-x) termwise).
        let times: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let events = vec![true; 8];
        let data = toy(&times, &events);
        let s = kaplan_meier(&data, false);
        let h = nelson_aalen(&data);
        for &t in &times {
            assert!((-h.eval(t)).exp() >= s.eval(t) - 1e-15);
        }
    }
}
