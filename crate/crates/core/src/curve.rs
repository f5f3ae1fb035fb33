//! Right-continuous step functions on a sorted time grid — the common shape
//! of survival curves S(t) and cumulative-hazard curves H(t).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which family of invariants a curve obeys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    /// Starts at 1 before the grid; values non-increasing within [0, 1].
    Survival,
    /// Starts at 0 before the grid; values non-decreasing and >= 0.
    Hazard,
}

/// Piecewise-constant, right-continuous function: the value at grid point
/// `times[i]` applies on `[times[i], times[i+1])`. Queries before the first
/// grid point return `pre_value()` (1 for survival curves, 0 for hazard).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    kind: CurveKind,
}

impl StepCurve {
    /// Survival-typed curve: values within [0, 1], non-increasing.
    pub fn survival(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Self {
            times,
            values,
            kind: CurveKind::Survival,
        };
        c.validate()?;
        Ok(c)
    }

    /// Hazard-typed curve: values >= 0, non-decreasing.
    pub fn hazard(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Self {
            times,
            values,
            kind: CurveKind::Hazard,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::InvalidInput(format!(
                "curve has {} times but {} values",
                self.times.len(),
                self.values.len()
            )));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "curve times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("curve contains non-finite time".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "curve contains non-finite value".into(),
            ));
        }
        match self.kind {
            CurveKind::Survival => {
                if self.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::InvalidInput(
                        "survival curve value outside [0, 1]".into(),
                    ));
                }
                if self.values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidInput(
                        "survival curve values must be non-increasing".into(),
                    ));
                }
            }
            CurveKind::Hazard => {
                if self.values.iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidInput("hazard curve value below 0".into()));
                }
                if self.values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidInput(
                        "hazard curve values must be non-decreasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value returned for queries before the first grid point.
    pub fn pre_value(&self) -> f64 {
        match self.kind {
            CurveKind::Survival => 1.0,
            CurveKind::Hazard => 0.0,
        }
    }

    /// Right-continuous evaluation: value of the last grid point <= t.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&g| g <= t);
        if idx == 0 {
            self.pre_value()
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit at t: value of the last grid point strictly < t. This is
    /// the "G(t⁻)" query used by IPCW weights.
    pub fn eval_left(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&g| g < t);
        if idx == 0 {
            self.pre_value()
        } else {
            self.values[idx - 1]
        }
    }

    /// Evaluates the curve at each point of an ascending grid.
    pub fn sample(&self, grid: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        self.accumulate_onto(grid, &mut out);
        out
    }

    /// Adds `eval(t)` into `acc` for each grid point, walking both grids
    /// once. `grid` must be ascending (the forest grid always is).
    pub fn accumulate_onto(&self, grid: &[f64], acc: &mut [f64]) {
        debug_assert_eq!(grid.len(), acc.len());
        let mut i = 0; // index into self.times
        for (g, slot) in grid.iter().zip(acc.iter_mut()) {
            while i < self.times.len() && self.times[i] <= *g {
                i += 1;
            }
            *slot += if i == 0 {
                self.pre_value()
            } else {
                self.values[i - 1]
            };
        }
    }
}
