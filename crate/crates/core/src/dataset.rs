//! Core data model: right-censored survival records and the risk tables
//! (event time / deaths / at-risk counts) that every estimator consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: covariates, an event indicator and an observation time.
///
/// `time` is the event time when `event` is true, otherwise the censoring
/// time — the subject was last seen alive at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub features: Vec<f64>,
    pub event: bool,
    pub time: f64,
}

/// An ordered collection of records sharing one feature space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub records: Vec<SurvivalRecord>,
    pub feature_names: Vec<String>,
}

impl SurvivalDataset {
    /// Builds a dataset and checks the invariants: every record has `time > 0`,
    /// finite features, and dimensionality matching `feature_names`.
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != d {
                return Err(Error::InvalidInput(format!(
                    "record {i} has {} features, expected {d}",
                    r.features.len()
                )));
            }
            if !(r.time > 0.0) || !r.time.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "record {i} has non-positive or non-finite time {}",
                    r.time
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "record {i} has a non-finite feature value"
                )));
            }
        }
        Ok(Self {
            records,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Fraction of records with an observed event; 0 on an empty dataset.
    pub fn event_fraction(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.n_events() as f64 / self.records.len() as f64
        }
    }

    /// All observation times (event and censoring alike), in record order.
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    /// Sorted, deduplicated times at which events occur.
    pub fn event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.event)
            .map(|r| r.time)
            .collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup();
        t
    }

    /// New dataset containing the rows at `indices` (cloned, in given order).
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Per-event-time death and at-risk counts: the sufficient statistics for
/// Kaplan–Meier and Nelson–Aalen.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    /// Unique times with at least one (effective) event, ascending.
    pub event_times: Vec<f64>,
    /// d_j: number of events at event_times[j].
    pub deaths: Vec<usize>,
    /// r_j: number of records with t_i >= event_times[j].
    pub at_risk: Vec<usize>,
}

/// Tallies deaths and risk-set sizes at each event time.
///
/// With `use_censoring_as_event` the indicator is flipped, which yields the
/// table of the censoring distribution (used for IPCW weights). Records whose
/// effective indicator is false only shrink the risk set. Ties are pooled:
/// all events at one time share a single row, and censored records at that
/// same time still count as at risk there (censoring happens "after" events).
pub fn build_risk_table(data: &SurvivalDataset, use_censoring_as_event: bool) -> RiskTable {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        data.records[a]
            .time
            .partial_cmp(&data.records[b].time)
            .unwrap()
    });

    let mut event_times = Vec::new();
    let mut deaths = Vec::new();
    let mut at_risk = Vec::new();

    let mut i = 0;
    while i < n {
        let t = data.records[order[i]].time;
        // One pass over the tie block at time t.
        let mut j = i;
        let mut d = 0usize;
        while j < n && data.records[order[j]].time == t {
            let eff_event = data.records[order[j]].event != use_censoring_as_event;
            if eff_event {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            event_times.push(t);
            deaths.push(d);
            at_risk.push(n - i);
        }
        i = j;
    }

    RiskTable {
        event_times,
        deaths,
        at_risk,
    }
}
