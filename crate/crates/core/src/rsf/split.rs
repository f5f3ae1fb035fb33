//! Log-rank split selection. `logrank_statistic` is the plain two-sample
//! chi-square form; `best_split` scans every candidate threshold of every
//! candidate feature with an incremental update of the observed/expected/
//! variance accumulators, which is what keeps tree training at
//! O(N·U) per feature instead of O(N²·U).

use crate::dataset::SurvivalDataset;

/// Two-sample log-rank chi-square statistic (O − E)²/V for group A against
/// group B, pooled over the combined event times. Degenerate comparisons
/// (no events, or one side never at risk) have zero variance and score 0.
pub fn logrank_statistic(group_a: &SurvivalDataset, group_b: &SurvivalDataset) -> f64 {
    let mut rows: Vec<(f64, bool, bool)> = Vec::with_capacity(group_a.len() + group_b.len());
    for r in &group_a.records {
        rows.push((r.time, r.event, true));
    }
    for r in &group_b.records {
        rows.push((r.time, r.event, false));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = rows.len();
    let mut observed_a = 0.0;
    let mut expected_a = 0.0;
    let mut variance = 0.0;
    // At-risk counts shrink as the scan passes each time block.
    let mut at_risk_a = rows.iter().filter(|r| r.2).count() as f64;
    let mut at_risk = n as f64;

    let mut i = 0;
    while i < n {
        let mut j = i;
        let mut deaths = 0.0;
        let mut deaths_a = 0.0;
        let mut leaving_a = 0.0;
        while j < n && rows[j].0 == rows[i].0 {
            if rows[j].1 {
                deaths += 1.0;
                if rows[j].2 {
                    deaths_a += 1.0;
                }
            }
            if rows[j].2 {
                leaving_a += 1.0;
            }
            j += 1;
        }
        if deaths > 0.0 {
            observed_a += deaths_a;
            expected_a += deaths * at_risk_a / at_risk;
            if at_risk > 1.0 {
                let c = deaths * (at_risk - deaths) / (at_risk * at_risk * (at_risk - 1.0));
                variance += c * at_risk_a * (at_risk - at_risk_a);
            }
        }
        at_risk -= (j - i) as f64;
        at_risk_a -= leaving_a;
        i = j;
    }

    if variance > 0.0 {
        let diff = observed_a - expected_a;
        diff * diff / variance
    } else {
        0.0
    }
}

/// Pooled risk structure of one node: per distinct event time u_j the death
/// count d_j, at-risk count r_j, the hypergeometric variance coefficient
/// c_j = d_j(r_j−d_j)/(r_j²(r_j−1)), and prefix sums of d_j/r_j.
struct NodeRisk {
    event_times: Vec<f64>,
    at_risk: Vec<f64>,
    var_coef: Vec<f64>,
    /// prefix_expected[j] = Σ_{j' < j} d_{j'}/r_{j'} (length U+1).
    prefix_expected: Vec<f64>,
}

impl NodeRisk {
    fn build(times: &[f64], events: &[bool]) -> NodeRisk {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());

        let mut event_times = Vec::new();
        let mut at_risk = Vec::new();
        let mut var_coef = Vec::new();
        let mut prefix_expected = vec![0.0];

        let n = order.len();
        let mut i = 0;
        while i < n {
            let t = times[order[i]];
            let mut j = i;
            let mut deaths = 0.0;
            while j < n && times[order[j]] == t {
                if events[order[j]] {
                    deaths += 1.0;
                }
                j += 1;
            }
            if deaths > 0.0 {
                let r = (n - i) as f64;
                let c = if r > 1.0 {
                    deaths * (r - deaths) / (r * r * (r - 1.0))
                } else {
                    0.0
                };
                event_times.push(t);
                at_risk.push(r);
                var_coef.push(c);
                prefix_expected.push(prefix_expected.last().unwrap() + deaths / r);
            }
            i = j;
        }
        NodeRisk {
            event_times,
            at_risk,
            var_coef,
            prefix_expected,
        }
    }

    /// Number of event times at or before t.
    fn position(&self, t: f64) -> usize {
        self.event_times.partition_point(|&u| u <= t)
    }
}

/// Exhaustive best log-rank split of `samples` over `candidate_features`.
///
/// Thresholds are midpoints between consecutive distinct sorted values of
/// each candidate feature; a split is admissible when both children hold at
/// least `min_leaf` samples. Returns the maximizing (feature, threshold,
/// statistic), preferring the lower feature index and then the lower
/// threshold on ties, or `None` when nothing admissible scores above 0.
pub fn best_split(
    samples: &SurvivalDataset,
    candidate_features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let m = samples.len();
    if m < 2 {
        return None;
    }
    let times: Vec<f64> = samples.records.iter().map(|r| r.time).collect();
    let events: Vec<bool> = samples.records.iter().map(|r| r.event).collect();
    let risk = NodeRisk::build(&times, &events);
    if risk.event_times.is_empty() {
        return None;
    }
    let positions: Vec<usize> = times.iter().map(|&t| risk.position(t)).collect();
    let n_events = risk.event_times.len();

    let mut best: Option<(usize, f64, f64)> = None;
    let mut order: Vec<usize> = (0..m).collect();
    let mut group_a_risk = vec![0.0_f64; n_events];

    for &feature in candidate_features {
        let value = |i: usize| samples.records[i].features[feature];
        order.sort_by(|&a, &b| value(a).partial_cmp(&value(b)).unwrap());

        group_a_risk.iter_mut().for_each(|v| *v = 0.0);
        let mut observed_a = 0.0;
        let mut expected_a = 0.0;
        let mut variance = 0.0;
        let mut moved = 0;

        while moved < m {
            let v = value(order[moved]);
            // Move the whole block of equal values into group A.
            while moved < m && value(order[moved]) == v {
                let i = order[moved];
                if events[i] {
                    observed_a += 1.0;
                }
                let pos = positions[i];
                expected_a += risk.prefix_expected[pos];
                for j in 0..pos {
                    variance +=
                        risk.var_coef[j] * (risk.at_risk[j] - 2.0 * group_a_risk[j] - 1.0);
                    group_a_risk[j] += 1.0;
                }
                moved += 1;
            }
            if moved == m {
                break;
            }
            if moved < min_leaf || m - moved < min_leaf {
                continue;
            }
            let next = value(order[moved]);
            let mid = 0.5 * (v + next);
            // Adjacent floats can round the midpoint onto `next`, which
            // would route both blocks left; fall back to the lower value.
            let threshold = if mid < next { mid } else { v };
            let statistic = if variance > 0.0 {
                let diff = observed_a - expected_a;
                diff * diff / variance
            } else {
                0.0
            };
            if statistic > 0.0 {
                // Lexicographic max of (statistic, −feature, −threshold):
                // exact ties go to the lower feature index, then the lower
                // threshold, independent of candidate order.
                let better = match best {
                    None => true,
                    Some((bf, bthr, bstat)) => {
                        statistic > bstat
                            || (statistic == bstat
                                && (feature < bf || (feature == bf && threshold < bthr)))
                    }
                };
                if better {
                    best = Some((feature, threshold, statistic));
                }
            }
        }
    }
    best
}
