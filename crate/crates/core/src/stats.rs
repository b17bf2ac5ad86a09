//! Non-parametric two-sample comparisons of frequency arrays.

use serde::{Deserialize, Serialize};

use crate::matching::{FrequencyArray, MatchError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample must not be empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("need at least 3 observations in total, got {0}")]
    TooFewObservations(usize),
    #[error("degrees of freedom must be at least 1")]
    InvalidDegreesOfFreedom,
    #[error("chi-squared value must be non-negative and finite, got {0}")]
    InvalidValue(f64),
    #[error(transparent)]
    Shape(#[from] MatchError),
}

fn check(sample: &[f64]) -> Result<(), StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn sorted(sample: &[f64]) -> Vec<f64> {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of elements of the sorted slice strictly below / at most `value`.
fn rank_bounds(sorted: &[f64], value: f64) -> (usize, usize) {
    (
        sorted.partition_point(|&v| v < value),
        sorted.partition_point(|&v| v <= value),
    )
}

/// Cliff's delta: `(#{x_i > y_j} - #{x_i < y_j}) / (|x| |y|)`.
pub fn cliffs_delta(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x)?;
    check(y)?;
    let ys = sorted(y);
    let mut dominance: i64 = 0;
    for &xi in x {
        let (below, at_most) = rank_bounds(&ys, xi);
        let above = ys.len() - at_most;
        dominance += below as i64 - above as i64;
    }
    Ok(dominance as f64 / (x.len() * y.len()) as f64)
}

/// Largest absolute gap between the two empirical CDFs.
pub fn ks_distance(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x)?;
    check(y)?;
    let (xs, ys) = (sorted(x), sorted(y));
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / nx - j as f64 / ny).abs());
    }
    Ok(best)
}

/// Kruskal-Wallis H with mid-rank ties and the usual tie correction,
/// returning `(H, p)` where `p` is the chi-squared upper tail with
/// `groups - 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<(f64, f64), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for g in groups {
        check(g)?;
    }
    let total: usize = groups.iter().map(|g| g.len()).sum();
    if total < 3 {
        return Err(StatsError::TooFewObservations(total));
    }

    let mut pooled: Vec<(f64, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.iter().map(move |&v| (v, gi)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sums = vec![0.0; groups.len()];
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean.
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        for &(_, gi) in &pooled[start..end] {
            rank_sums[gi] += mid_rank;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }

    let n = total as f64;
    let correction = 1.0 - tie_term / (n * n * n - n);
    if correction <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let centre = (n + 1.0) / 2.0;
    let spread: f64 = groups
        .iter()
        .zip(&rank_sums)
        .map(|(g, &sum)| {
            let len = g.len() as f64;
            len * (sum / len - centre).powi(2)
        })
        .sum();
    let h = (12.0 / (n * (n + 1.0)) * spread / correction).max(0.0);
    let p = chi2_sf(h, groups.len() as u32 - 1)?;
    Ok((h, p))
}

/// Upper-tail probability of the chi-squared distribution.
pub fn chi2_sf(value: f64, df: u32) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::InvalidDegreesOfFreedom);
    }
    if value < 0.0 || !value.is_finite() {
        return Err(StatsError::InvalidValue(value));
    }
    Ok(regularized_gamma_q(f64::from(df) / 2.0, value / 2.0))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Q(a, x) = Γ(a, x) / Γ(a). Series below `a + 1`, Lentz continued
/// fraction above.
fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (1.0 - sum * log_prefactor.exp()).clamp(0.0, 1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (log_prefactor.exp() * h).clamp(0.0, 1.0)
    }
}

/// Cliff's delta, KS distance and Kruskal-Wallis H / p for two arrays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub delta: f64,
    pub ks: f64,
    pub h_statistic: f64,
    pub p_value: f64,
    pub n_first: usize,
    pub n_second: usize,
}

/// Compares two samples with `delta = cliffs_delta(first, second)`.
pub fn compare_samples(first: &[f64], second: &[f64]) -> Result<CohortComparison, StatsError> {
    let delta = cliffs_delta(first, second)?;
    let ks = ks_distance(first, second)?;
    let (h_statistic, p_value) = kruskal_wallis(&[first, second])?;
    Ok(CohortComparison {
        delta,
        ks,
        h_statistic,
        p_value,
        n_first: first.len(),
        n_second: second.len(),
    })
}

/// Compares arrays with `delta = cliffs_delta(first, second)`; positive
/// when `first` tends to hold the larger counts.
pub fn compare_arrays(first: &FrequencyArray, second: &FrequencyArray) -> Result<CohortComparison, StatsError> {
    first.same_shape(second)?;
    compare_samples(&first.as_f64(), &second.as_f64())
}

/// Cohort audit comparison. The post-cohort array is the first argument
/// of Cliff's delta, so heavier regurgitation in the pre cohort gives a
/// negative delta.
pub fn compare_cohorts(pre: &FrequencyArray, post: &FrequencyArray) -> Result<CohortComparison, StatsError> {
    compare_arrays(post, pre)
}
