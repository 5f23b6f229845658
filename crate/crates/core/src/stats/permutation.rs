//! Permutation tests for the 2x2 between-participant design with a
//! repeated time factor.
//!
//! Every permutation draws from its own ChaCha8 stream (seed, index), so
//! the p-value does not depend on how the work is split across threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Factor, Measure};
use crate::error::{Error, Result};

pub const DEFAULT_N_PERM: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    Main { factor: Factor },
    Interaction { a: Factor, b: Factor },
    RankSum,
}

impl std::fmt::Display for Effect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Effect::Main { factor } => write!(f, "{factor}"),
            Effect::Interaction { a, b } => write!(f, "{a} x {b}"),
            Effect::RankSum => f.write_str("rank sum"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Permutation,
    ResidualPermutation,
    ExactEnumeration,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub effect: Effect,
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: Option<u64>,
    pub method: Method,
}

/// RNG for permutation `index` under `seed`.
pub fn permutation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `(1 + #{stat >= observed}) / (1 + n_perm)`, with a small relative
/// tolerance so that permutations reproducing the observed statistic up to
/// rounding count as ties.
fn monte_carlo_p<F>(observed: f64, n_perm: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let threshold = observed - 1e-10 * observed.abs();
    let hits = (0..n_perm)
        .into_par_iter()
        .filter(|&i| stat(&mut permutation_rng(seed, i)) >= threshold)
        .count();
    (1 + hits) as f64 / (1 + n_perm) as f64
}

/// Participants with at least one value, their between-factor levels and
/// values laid out by time index.
struct Panel {
    attention: Vec<usize>,
    feedback: Vec<usize>,
    values: Vec<Vec<Option<f64>>>,
    n_times: usize,
}

impl Panel {
    fn build(data: &Dataset, measure: Measure) -> Self {
        let times = data.times(measure);
        let mut panel = Panel { attention: vec![], feedback: vec![], values: vec![], n_times: times.len() };
        for (_, row) in data.participants() {
            let vals: Vec<Option<f64>> = times.iter().map(|&t| row.value(measure, t)).collect();
            if vals.iter().all(Option::is_none) {
                continue;
            }
            panel.attention.push(row.level(Factor::Attention).unwrap());
            panel.feedback.push(row.level(Factor::Feedback).unwrap());
            panel.values.push(vals);
        }
        panel
    }

    fn labels(&self, factor: Factor) -> &[usize] {
        match factor {
            Factor::Attention => &self.attention,
            Factor::Feedback => &self.feedback,
            Factor::Time => unreachable!("time is not a between factor"),
        }
    }

    fn participant_means(&self) -> Vec<f64> {
        self.values.iter().map(|v| mean(v.iter().flatten().copied())).collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn insufficient(what: String) -> Error {
    Error::InsufficientData(what)
}

fn check_between(labels: &[usize], factor: Factor, measure: Measure) -> Result<()> {
    for level in 0..2 {
        let n = labels.iter().filter(|&&l| l == level).count();
        if n < 2 {
            return Err(insufficient(format!("{measure}: {factor} level {level} has {n} participants, need 2")));
        }
    }
    Ok(())
}

fn two_group_diff(values: &[f64], labels: &[usize]) -> f64 {
    let mut s = [0.0; 2];
    let mut n = [0usize; 2];
    for (&v, &l) in values.iter().zip(labels) {
        s[l] += v;
        n[l] += 1;
    }
    (s[0] / n[0] as f64 - s[1] / n[1] as f64).abs()
}

/// Statistic for the time effect: absolute difference for two levels,
/// sample variance of the level means otherwise.
fn time_stat(values: &[Vec<Option<f64>>], n_times: usize) -> f64 {
    let mut s = vec![0.0; n_times];
    let mut n = vec![0usize; n_times];
    for row in values {
        for (t, v) in row.iter().enumerate() {
            if let Some(v) = v {
                s[t] += v;
                n[t] += 1;
            }
        }
    }
    let means: Vec<f64> = s.iter().zip(&n).map(|(s, &n)| s / n as f64).collect();
    if n_times == 2 {
        return (means[0] - means[1]).abs();
    }
    let grand = means.iter().sum::<f64>() / n_times as f64;
    means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_times - 1) as f64
}

/// Main effect of `factor` on `measure`.
///
/// Between factors compare participant means (over available times) and
/// permute labels across participants. Time permutes each participant's
/// values across the time points they have.
pub fn perm_test_main(data: &Dataset, factor: Factor, measure: Measure, n_perm: usize, seed: u64) -> Result<TestResult> {
    let panel = Panel::build(data, measure);
    let statistic;
    let p_value;
    match factor {
        Factor::Attention | Factor::Feedback => {
            let labels = panel.labels(factor).to_vec();
            check_between(&labels, factor, measure)?;
            let means = panel.participant_means();
            statistic = two_group_diff(&means, &labels);
            p_value = monte_carlo_p(statistic, n_perm, seed, |rng| {
                let mut l = labels.clone();
                l.shuffle(rng);
                two_group_diff(&means, &l)
            });
        }
        Factor::Time => {
            if panel.n_times < 2 {
                return Err(insufficient(format!("{measure}: need 2 time points, found {}", panel.n_times)));
            }
            for t in 0..panel.n_times {
                let n = panel.values.iter().filter(|v| v[t].is_some()).count();
                if n < 2 {
                    return Err(insufficient(format!("{measure}: time {} has {n} observations", t + 1)));
                }
            }
            statistic = time_stat(&panel.values, panel.n_times);
            p_value = monte_carlo_p(statistic, n_perm, seed, |rng| {
                let permuted: Vec<Vec<Option<f64>>> = panel
                    .values
                    .iter()
                    .map(|row| {
                        let slots: Vec<usize> = (0..row.len()).filter(|&t| row[t].is_some()).collect();
                        let mut vals: Vec<f64> = row.iter().flatten().copied().collect();
                        vals.shuffle(rng);
                        let mut out = vec![None; row.len()];
                        for (slot, v) in slots.into_iter().zip(vals) {
                            out[slot] = Some(v);
                        }
                        out
                    })
                    .collect();
                time_stat(&permuted, panel.n_times)
            });
        }
    }
    Ok(TestResult {
        effect: Effect::Main { factor },
        statistic,
        p_value,
        n_permutations: n_perm,
        seed: Some(seed),
        method: Method::Permutation,
    })
}

/// Interaction sum of squares of a two-way cell-means table.
///
/// `cells[g][t] = (sum, n)`. Row and column effects are taken from the
/// unweighted cell means; each cell's residual is weighted by its count.
fn interaction_ss(cells: &[Vec<(f64, usize)>]) -> f64 {
    let rows = cells.len();
    let cols = cells[0].len();
    let m: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|&(s, n)| s / n as f64).collect()).collect();
    let row_mean: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / cols as f64).collect();
    let col_mean: Vec<f64> = (0..cols).map(|t| m.iter().map(|r| r[t]).sum::<f64>() / rows as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / rows as f64;
    let mut ss = 0.0;
    for g in 0..rows {
        for t in 0..cols {
            let r = m[g][t] - row_mean[g] - col_mean[t] + grand;
            ss += cells[g][t].1 as f64 * r * r;
        }
    }
    ss
}

fn factor_time_cells(centred: &[Vec<Option<f64>>], labels: &[usize], n_times: usize) -> Vec<Vec<(f64, usize)>> {
    let mut cells = vec![vec![(0.0, 0usize); n_times]; 2];
    for (row, &g) in centred.iter().zip(labels) {
        for (t, v) in row.iter().enumerate() {
            if let Some(v) = v {
                cells[g][t].0 += v;
                cells[g][t].1 += 1;
            }
        }
    }
    cells
}

/// `factor` x time interaction on `measure`.
///
/// Each participant is centred on their own mean, then factor labels are
/// permuted across participants.
pub fn perm_test_interaction(
    data: &Dataset,
    factor: Factor,
    measure: Measure,
    n_perm: usize,
    seed: u64,
) -> Result<TestResult> {
    if factor == Factor::Time {
        return Err(Error::Domain("interaction partner must be a between factor".into()));
    }
    let panel = Panel::build(data, measure);
    if panel.n_times < 2 {
        return Err(insufficient(format!("{measure}: need 2 time points, found {}", panel.n_times)));
    }
    let labels = panel.labels(factor).to_vec();
    check_between(&labels, factor, measure)?;
    let centred: Vec<Vec<Option<f64>>> = panel
        .values
        .iter()
        .map(|row| {
            let m = mean(row.iter().flatten().copied());
            row.iter().map(|v| v.map(|v| v - m)).collect()
        })
        .collect();
    let cells = factor_time_cells(&centred, &labels, panel.n_times);
    if cells.iter().flatten().any(|&(_, n)| n == 0) {
        return Err(insufficient(format!("{measure}: an {factor} x time cell is empty")));
    }
    let statistic = interaction_ss(&cells);
    let p_value = monte_carlo_p(statistic, n_perm, seed, |rng| {
        let mut l = labels.clone();
        l.shuffle(rng);
        let cells = factor_time_cells(&centred, &l, panel.n_times);
        if cells.iter().flatten().any(|&(_, n)| n == 0) {
            return f64::NEG_INFINITY;
        }
        interaction_ss(&cells)
    });
    Ok(TestResult {
        effect: Effect::Interaction { a: factor, b: Factor::Time },
        statistic,
        p_value,
        n_permutations: n_perm,
        seed: Some(seed),
        method: Method::Permutation,
    })
}

fn two_by_two_cells(y: &[f64], att: &[usize], fb: &[usize]) -> Vec<Vec<(f64, usize)>> {
    let mut cells = vec![vec![(0.0, 0usize); 2]; 2];
    for i in 0..y.len() {
        cells[att[i]][fb[i]].0 += y[i];
        cells[att[i]][fb[i]].1 += 1;
    }
    cells
}

/// Least-squares additive fit `y ~ 1 + attention + feedback`.
fn additive_fit(y: &[f64], att: &[usize], fb: &[usize]) -> Vec<f64> {
    // Normal equations for the design [1, a, f].
    let n = y.len() as f64;
    let (mut sa, mut sf, mut saf, mut sy, mut say, mut sfy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let (a, f) = (att[i] as f64, fb[i] as f64);
        sa += a;
        sf += f;
        saf += a * f;
        sy += y[i];
        say += a * y[i];
        sfy += f * y[i];
    }
    let m = [[n, sa, sf], [sa, sa, saf], [sf, saf, sf]];
    let b = [sy, say, sfy];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let coef: Vec<f64> = (0..3)
        .map(|c| {
            let mut mc = m;
            for r in 0..3 {
                mc[r][c] = b[r];
            }
            det(&mc) / d
        })
        .collect();
    (0..y.len()).map(|i| coef[0] + coef[1] * att[i] as f64 + coef[2] * fb[i] as f64).collect()
}

/// Attention x feedback interaction on a measure with one value per
/// participant (the participant mean if there are several).
///
/// Residuals of the additive model are permuted and added back to the
/// fitted values.
pub fn perm_test_between_interaction(data: &Dataset, measure: Measure, n_perm: usize, seed: u64) -> Result<TestResult> {
    let panel = Panel::build(data, measure);
    let y = panel.participant_means();
    let cells = two_by_two_cells(&y, &panel.attention, &panel.feedback);
    for (a, row) in cells.iter().enumerate() {
        for (f, &(_, n)) in row.iter().enumerate() {
            if n < 2 {
                return Err(insufficient(format!("{measure}: attention {a} x feedback {f} cell has {n} participants")));
            }
        }
    }
    let statistic = interaction_ss(&cells);
    let fitted = additive_fit(&y, &panel.attention, &panel.feedback);
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let p_value = monte_carlo_p(statistic, n_perm, seed, |rng| {
        let mut r = resid.clone();
        r.shuffle(rng);
        let ystar: Vec<f64> = fitted.iter().zip(&r).map(|(f, r)| f + r).collect();
        interaction_ss(&two_by_two_cells(&ystar, &panel.attention, &panel.feedback))
    });
    Ok(TestResult {
        effect: Effect::Interaction { a: Factor::Attention, b: Factor::Feedback },
        statistic,
        p_value,
        n_permutations: n_perm,
        seed: Some(seed),
        method: Method::ResidualPermutation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Condition;

    #[test]
    fn interaction_ss_zero_for_additive_table() {
        let cells = vec![vec![(1.0, 1), (3.0, 1), (2.0, 1)], vec![(6.0, 1), (8.0, 1), (7.0, 1)]];
        assert!(interaction_ss(&cells).abs() < 1e-12);
        // 2x2 crossover: residuals +-1 in each cell.
        let cells = vec![vec![(1.0, 1), (-1.0, 1)], vec![(-1.0, 1), (1.0, 1)]];
        assert!((interaction_ss(&cells) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn additive_fit_recovers_additive_data() {
        let att = [0, 0, 1, 1, 0, 1];
        let fb = [0, 1, 0, 1, 1, 0];
        let y: Vec<f64> = (0..6).map(|i| 2.0 + 3.0 * att[i] as f64 - 1.5 * fb[i] as f64).collect();
        for (a, b) in additive_fit(&y, &att, &fb).iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn time_stat_shapes() {
        let v = vec![vec![Some(1.0), Some(3.0)], vec![Some(1.0), Some(5.0)]];
        assert_eq!(time_stat(&v, 2), 3.0);
        let v = vec![vec![Some(1.0), Some(2.0), Some(3.0)]];
        assert_eq!(time_stat(&v, 3), 1.0);
    }

    #[test]
    fn single_time_point_interaction_is_insufficient() {
        let mut d = Dataset::new();
        for i in 0..8 {
            let id = format!("p{i}");
            let c = Condition::ALL[i % 4];
            d.add_participant(&id, c).unwrap();
            d.insert(&id, Measure::Stai, 1, i as f64).unwrap();
        }
        let r = perm_test_interaction(&d, Factor::Attention, Measure::Stai, 100, 1);
        assert!(matches!(r, Err(Error::InsufficientData(_))));
        assert!(perm_test_main(&d, Factor::Time, Measure::Stai, 100, 1).is_err());
    }
}
