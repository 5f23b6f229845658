//! Two-sample Wilcoxon rank-sum test.

use statrs::distribution::{ContinuousCDF, Normal};

use super::permutation::{Effect, Method, TestResult};
use crate::error::{Error, Result};

/// Samples with at most this many values in total are enumerated exactly.
pub const EXACT_MAX_N: usize = 12;

/// Midranks (1-based) of the concatenation `a ++ b`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn prepare(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Validation("rank-sum test needs finite values".into()));
    }
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&all);
    let w = ranks[..a.len()].iter().sum();
    Ok((ranks, w))
}

fn result(statistic: f64, p_value: f64, method: Method) -> TestResult {
    TestResult {
        effect: Effect::RankSum,
        statistic,
        p_value: p_value.min(1.0),
        n_permutations: 0,
        seed: None,
        method,
    }
}

/// Two-sided p by enumerating every assignment of the pooled midranks to
/// the first sample.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let (ranks, w) = prepare(a, b)?;
    let n = ranks.len();
    if n > 20 {
        return Err(Error::Domain(format!("exact enumeration limited to 20 values, got {n}")));
    }
    let na = a.len() as u32;
    let expected = a.len() as f64 * (n as f64 + 1.0) / 2.0;
    let observed = (w - expected).abs() - 1e-9;
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != na {
            continue;
        }
        total += 1;
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if (s - expected).abs() >= observed {
            hits += 1;
        }
    }
    Ok(result(w, hits as f64 / total as f64, Method::ExactEnumeration))
}

/// Normal approximation with continuity and tie corrections.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let (ranks, w) = prepare(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let expected = na * (n + 1.0) / 2.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)).max(1.0));
    if var <= 0.0 {
        return Ok(result(w, 1.0, Method::NormalApproximation));
    }
    let z = ((w - expected).abs() - 0.5).max(0.0) / var.sqrt();
    let p = 2.0 * (1.0 - Normal::standard().cdf(z));
    Ok(result(w, p, Method::NormalApproximation))
}

/// Rank-sum test; the statistic is the rank sum of `a`.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() + b.len() <= EXACT_MAX_N {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}
