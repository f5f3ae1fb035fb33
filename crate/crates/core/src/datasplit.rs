//! Partitioning survival data for simulated federations: stratified
//! train/test and validation splits, the Dirichlet label-skew split that
//! assigns training records to K clients with controllable heterogeneity,
//! and a synthetic data generator for self-contained experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{SurvivalDataset, SurvivalRecord};
use crate::error::{Error, Result};

/// Federation split parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitConfig {
    /// Number of clients.
    pub k: usize,
    /// Dirichlet concentration; `inf` means exactly uniform assignment.
    pub alpha: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_label_bins")]
    pub n_label_bins: usize,
    /// Used by standalone split materialization; the experiment harness
    /// derives its own per-repetition streams instead.
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.30
}
fn default_validation_fraction() -> f64 {
    0.30
}
fn default_label_bins() -> usize {
    4
}

impl SplitConfig {
    pub fn new(k: usize, alpha: f64, seed: u64) -> Self {
        Self {
            k,
            alpha,
            test_fraction: default_test_fraction(),
            validation_fraction: default_validation_fraction(),
            n_label_bins: default_label_bins(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("client count must be >= 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must be positive or infinite, got {}",
                self.alpha
            )));
        }
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie strictly between 0 and 1, got {f}"
                )));
            }
        }
        if self.n_label_bins == 0 {
            return Err(Error::InvalidInput("n_label_bins must be >= 1".into()));
        }
        Ok(())
    }
}

/// Indices of each stratum (censored first, events second), in dataset order.
fn strata(data: &SurvivalDataset) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, r) in data.records.iter().enumerate() {
        out[r.event as usize].push(i);
    }
    out
}

/// Split stratum sizes into per-stratum holdout counts summing to `target`
/// by largest remainder: floor the exact quotas, then hand the leftover
/// units to the largest fractional parts (ties to the earlier stratum).
fn largest_remainder(sizes: &[usize], target: usize, total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(sizes.len());
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(sizes.len());
    let mut assigned = 0;
    for (i, &sz) in sizes.iter().enumerate() {
        let quota = sz as f64 * target as f64 / total as f64;
        let fl = quota.floor() as usize;
        counts.push(fl);
        assigned += fl;
        fracs.push((quota - fl as f64, i));
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter().take(target.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified holdout: returns (kept, held) index sets where |held| =
/// round(N·fraction) and the event/censored mix of `held` follows the data.
fn stratified_holdout<R: Rng>(
    data: &SurvivalDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "holdout fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = data.len();
    let target = (n as f64 * fraction).round() as usize;
    let groups = strata(data);
    let sizes = [groups[0].len(), groups[1].len()];
    let counts = largest_remainder(&sizes, target, n);

    let mut held = Vec::with_capacity(target);
    let mut kept = Vec::with_capacity(n - target);
    for (group, &take) in groups.iter().zip(&counts) {
        let mut idx = group.clone();
        idx.shuffle(rng);
        held.extend_from_slice(&idx[..take]);
        kept.extend_from_slice(&idx[take..]);
    }
    held.sort_unstable();
    kept.sort_unstable();
    Ok((kept, held))
}

fn split_by_event_presence<R: Rng>(
    data: &SurvivalDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    let (kept, held) = stratified_holdout(data, fraction, rng)?;
    let kept_ds = data.subset(&kept);
    let held_ds = data.subset(&held);
    if kept_ds.n_events() == 0 || held_ds.n_events() == 0 {
        return Err(Error::InvalidInput(format!(
            "dataset too small to stratify: {} events across {} records",
            data.n_events(),
            data.len()
        )));
    }
    Ok((kept_ds, held_ds))
}

/// Split into (train, test) with |test| = round(N·test_fraction), stratified
/// by the event indicator. Errors if either side would end up without an
/// observed event.
pub fn train_test_split<R: Rng>(
    data: &SurvivalDataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    split_by_event_presence(data, test_fraction, rng)
}

/// Split a client's local data into (local_train, local_val); same
/// stratification and error rules as [`train_test_split`].
pub fn validation_split<R: Rng>(
    local: &SurvivalDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    split_by_event_presence(local, fraction, rng)
}

/// Label class of a record: event indicator crossed with a quantile bin of
/// the observed time. Boundaries are inner quantiles of the pooled times.
fn label_classes(train: &SurvivalDataset, n_bins: usize) -> Vec<usize> {
    let mut times = train.times();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let boundaries: Vec<f64> = (1..n_bins)
        .map(|i| {
            let rank = i as f64 / n_bins as f64 * (times.len() - 1) as f64;
            let lo = rank.floor() as usize;
            let frac = rank - lo as f64;
            if lo + 1 < times.len() {
                times[lo] + (times[lo + 1] - times[lo]) * frac
            } else {
                times[lo]
            }
        })
        .collect();
    train
        .records
        .iter()
        .map(|r| {
            let bin = boundaries.iter().filter(|&&b| r.time > b).count();
            r.event as usize * n_bins + bin
        })
        .collect()
}

/// Assign training records to `config.k` clients with label-skewed
/// proportions drawn from a Dirichlet distribution.
///
/// Records are labeled by crossing the event indicator with
/// `config.n_label_bins` time-quantile bins. Per label class, client
/// proportions are drawn as normalized Gamma(α, 1) variates and each record
/// is assigned multinomially; `alpha = inf` short-circuits to an exact
/// round-robin (uniform) assignment within each class. Clients left empty
/// receive one record from the currently largest client.
pub fn label_skew_split<R: Rng>(
    train: &SurvivalDataset,
    config: &SplitConfig,
    rng: &mut R,
) -> Result<Vec<SurvivalDataset>> {
    config.validate()?;
    let k = config.k;
    let n = train.len();
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cannot split {n} records across {k} clients"
        )));
    }
    if k == 1 {
        let all: Vec<usize> = (0..n).collect();
        return Ok(vec![train.subset(&all)]);
    }

    let labels = label_classes(train, config.n_label_bins);
    let n_classes = 2 * config.n_label_bins;
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); k];

    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if config.alpha.is_infinite() {
            members.shuffle(rng);
            let start = rng.gen_range(0..k);
            for (m, &rec) in members.iter().enumerate() {
                assignment[(start + m) % k].push(rec);
            }
        } else {
            let gamma = Gamma::new(config.alpha, 1.0)
                .map_err(|e| Error::InvalidInput(format!("bad Dirichlet alpha: {e}")))?;
            let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
            let total: f64 = p.iter().sum();
            if total > 0.0 {
                for v in &mut p {
                    *v /= total;
                }
            } else {
                // Every Gamma draw underflowed to zero (conceivable only at
                // extreme alpha); fall back to uniform proportions.
                p = vec![1.0 / k as f64; k];
            }
            let mut cum = p.clone();
            for i in 1..k {
                cum[i] += cum[i - 1];
            }
            for &rec in &members {
                let u: f64 = rng.gen();
                let client = cum.partition_point(|&c| c <= u).min(k - 1);
                assignment[client].push(rec);
            }
        }
    }

    // Repair empty clients with single-record transfers from the largest.
    loop {
        let Some(empty) = assignment.iter().position(Vec::is_empty) else {
            break;
        };
        let donor = (0..k)
            .max_by_key(|&c| (assignment[c].len(), usize::MAX - c))
            .unwrap();
        let moved = assignment[donor].pop().unwrap();
        assignment[empty].push(moved);
    }

    Ok(assignment
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            train.subset(&idx)
        })
        .collect())
}

/// Linear risk coefficients used by [`synth_survival`]: the first ⌈d/2⌉
/// features get alternating ±0.5, the rest are noise.
pub fn synth_coefficients(d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            if i < d.div_ceil(2) {
                if i % 2 == 0 {
                    0.5
                } else {
                    -0.5
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// Generate `n` records with `d` standard-normal features, exponential event
/// times with rate exp(β·x), and independent exponential censoring
/// calibrated so the expected censored fraction is `censor_rate`.
pub fn synth_survival<R: Rng>(
    n: usize,
    d: usize,
    censor_rate: f64,
    rng: &mut R,
) -> Result<SurvivalDataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("need n >= 1 and d >= 1".into()));
    }
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(Error::InvalidInput(format!(
            "censor_rate must lie in [0, 1), got {censor_rate}"
        )));
    }
    let beta = synth_coefficients(d);
    let censor_lambda = if censor_rate == 0.0 {
        None
    } else {
        let sigma = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        Some(calibrate_censoring_rate(censor_rate, sigma))
    };

    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let features: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let lp: f64 = beta.iter().zip(&features).map(|(b, x)| b * x).sum();
        let event_dist = Exp::new(lp.exp()).expect("positive rate");
        let mut t_event: f64 = event_dist.sample(rng);
        while t_event <= 0.0 {
            t_event = event_dist.sample(rng);
        }
        let (time, event) = match censor_lambda {
            None => (t_event, true),
            Some(lambda) => {
                let censor_dist = Exp::new(lambda).expect("positive rate");
                let mut t_cens: f64 = censor_dist.sample(rng);
                while t_cens <= 0.0 {
                    t_cens = censor_dist.sample(rng);
                }
                if t_event <= t_cens {
                    (t_event, true)
                } else {
                    (t_cens, false)
                }
            }
        };
        records.push(SurvivalRecord {
            features,
            event,
            time,
        });
    }
    let names = (0..d).map(|i| format!("x{i}")).collect();
    SurvivalDataset::new(records, names)
}

/// Find the exponential censoring rate λ_c with
/// E_x[ λ_c / (λ_c + e^{β·x}) ] = target, where β·x ~ N(0, σ²). The
/// expectation is a smooth monotone function of λ_c, evaluated by
/// quadrature over the normal density and inverted by bisection.
fn calibrate_censoring_rate(target: f64, sigma: f64) -> f64 {
    let censored_fraction = |lambda: f64| -> f64 {
        if sigma == 0.0 {
            return lambda / (lambda + 1.0);
        }
        // Trapezoid over s ∈ [−8σ, 8σ]; the integrand is bounded by the
        // normal density so the truncation error is ~1e-15.
        let steps = 4000;
        let lo = -8.0 * sigma;
        let hi = 8.0 * sigma;
        let h = (hi - lo) / steps as f64;
        let density = |s: f64| {
            (-(s * s) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let f = |s: f64| lambda / (lambda + s.exp()) * density(s);
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            acc += f(lo + h * i as f64);
        }
        acc * h
    };

    let mut lo = 1e-9_f64;
    let mut hi = 1e9_f64;
    for _ in 0..200 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if censored_fraction(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    (0.5 * (lo.ln() + hi.ln())).exp()
}
