//! Rank-based significance testing for comparing strategy outcomes across
//! repetitions: Kruskal–Wallis with tie correction, and Dunn's post-hoc
//! pairwise test with Bonferroni adjustment.
//!
//! The special functions underneath (ln-gamma, regularized incomplete
//! gamma, normal CDF) are implemented here directly — the classic Lanczos /
//! series / continued-fraction routines — and pinned against high-precision
//! reference tables in the tests.

use crate::error::{Error, Result};

// ── special functions ────────────────────────────────────────────────────

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for x > 0 (Lanczos approximation,
/// reflection formula below 0.5).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma function Q(a, x) for a > 0, x ≥ 0.
/// Series expansion of P for x < a+1, modified Lentz continued fraction
/// for the rest.
pub fn reg_upper_gamma(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // P(a, x) = x^a e^{-x}/Γ(a) · Σ_{n≥0} x^n / (a (a+1) ⋯ (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..500 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        // Q(a, x) = x^a e^{-x}/Γ(a) · continued fraction
        const FPMIN: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 3e-16 {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// Survival function of the chi-square distribution: P(X ≥ x) with `df`
/// degrees of freedom.
pub fn chi2_survival(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidInput("chi-square needs df >= 1".into()));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidInput(format!(
            "chi-square statistic must be finite and non-negative, got {x}"
        )));
    }
    Ok(reg_upper_gamma(df as f64 / 2.0, x / 2.0))
}

/// Complementary error function, accurate in both tails.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x == 0.0 {
        1.0
    } else {
        reg_upper_gamma(0.5, x * x)
    }
}

/// Standard normal CDF Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided tail probability of |Z| ≥ |z| under the standard normal.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

// ── rank tests ───────────────────────────────────────────────────────────

/// One cell of the Dunn pairwise matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseCell {
    /// Absolute standardized rank-mean difference |z_ij|.
    pub z: f64,
    /// Bonferroni-adjusted two-sided p-value, clamped to 1.
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Outcome of a Kruskal–Wallis test, optionally with Dunn's pairwise
/// post-hoc matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    /// Tie-corrected H statistic.
    pub statistic: f64,
    pub p_value: f64,
    /// k×k symmetric matrix when the post-hoc test was requested.
    pub pairwise: Option<Vec<Vec<PairwiseCell>>>,
}

/// Pooled mid-ranks (1-based, ties get the average rank) plus the tie-group
/// correction term ΣT where T = t³ − t per tied block.
struct Ranked {
    /// Per-group mean ranks.
    mean_ranks: Vec<f64>,
    sizes: Vec<usize>,
    n: usize,
    tie_term: f64,
}

fn rank_groups(groups: &[Vec<f64>]) -> Result<Ranked> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput(
            "rank test needs at least 2 groups".into(),
        ));
    }
    let mut pooled: Vec<(f64, usize)> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::InvalidInput(format!("group {gi} is empty")));
        }
        for &v in g {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "group {gi} contains non-finite value {v}"
                )));
            }
            pooled.push((v, gi));
        }
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = pooled.len();

    let mut rank_sums = vec![0.0; groups.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j averaged over the tied block.
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        for p in &pooled[i..j] {
            rank_sums[p.1] += mid_rank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mean_ranks = rank_sums
        .iter()
        .zip(&sizes)
        .map(|(s, &sz)| s / sz as f64)
        .collect();
    Ok(Ranked {
        mean_ranks,
        sizes,
        n,
        tie_term,
    })
}

/// Kruskal–Wallis H test with tie correction. When every pooled value is
/// identical the statistic is 0 and p = 1 by convention.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    let ranked = rank_groups(groups)?;
    let n = ranked.n as f64;
    let mut h = 0.0;
    for (r_bar, &sz) in ranked.mean_ranks.iter().zip(&ranked.sizes) {
        h += sz as f64 * r_bar * r_bar;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

    let correction = 1.0 - ranked.tie_term / (n * n * n - n);
    let (statistic, p_value) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        let h = h / correction;
        // tiny negative values from cancellation are rounded to exactly 0
        let h = h.max(0.0);
        (h, chi2_survival(h, groups.len() - 1)?)
    };
    Ok(TestResult {
        statistic,
        p_value,
        pairwise: None,
    })
}

/// Kruskal–Wallis plus Dunn's pairwise post-hoc comparisons with a
/// Bonferroni adjustment over the k(k−1)/2 pairs. `alpha` is the family
/// significance level applied to the adjusted p-values.
pub fn kruskal_wallis_dunn(groups: &[Vec<f64>], alpha: f64) -> Result<TestResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "significance level must lie in [0, 1], got {alpha}"
        )));
    }
    let mut result = kruskal_wallis(groups)?;
    let ranked = rank_groups(groups)?;
    let k = groups.len();
    let n = ranked.n as f64;
    let m = (k * (k - 1) / 2) as f64;
    // Tie-corrected variance factor of the rank-mean difference.
    let var_factor = n * (n + 1.0) / 12.0 - ranked.tie_term / (12.0 * (n - 1.0));

    let unit = PairwiseCell {
        z: 0.0,
        p_adjusted: 1.0,
        significant: false,
    };
    let mut matrix = vec![vec![unit; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let cell = if var_factor <= 0.0 {
                PairwiseCell {
                    z: 0.0,
                    p_adjusted: 1.0,
                    significant: false,
                }
            } else {
                let se = (var_factor
                    * (1.0 / ranked.sizes[i] as f64 + 1.0 / ranked.sizes[j] as f64))
                    .sqrt();
                let z = ((ranked.mean_ranks[i] - ranked.mean_ranks[j]) / se).abs();
                let p_adjusted = (m * normal_two_sided_p(z)).min(1.0);
                PairwiseCell {
                    z,
                    p_adjusted,
                    significant: p_adjusted < alpha,
                }
            };
            matrix[j][i] = cell.clone();
            matrix[i][j] = cell;
        }
    }
    result.pairwise = Some(matrix);
    Ok(result)
}
