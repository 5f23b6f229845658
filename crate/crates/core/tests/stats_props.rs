use bloom_core::protocol::{Attention, Condition, Feedback};
use bloom_core::stats::synthetic::{self, bundled_reference_matched, null_dataset, reference_matched, targets, REFERENCE_MATCHED_SEED};
use bloom_core::stats::wilcoxon::{wilcoxon_exact, wilcoxon_normal};
use bloom_core::stats::*;
use bloom_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided exact rank-sum p by brute force over label assignments, with
/// ranks computed by counting.
fn oracle_rank_sum_p(a: &[f64], b: &[f64]) -> f64 {
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = all.len();
    let rank = |x: f64| {
        let below = all.iter().filter(|&&y| y < x).count() as f64;
        let equal = all.iter().filter(|&&y| y == x).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = all.iter().map(|&x| rank(x)).collect();
    let e = a.len() as f64 * (n as f64 + 1.0) / 2.0;
    let w: f64 = ranks[..a.len()].iter().sum();
    let mut hits = 0;
    let mut total = 0;
    fn choose(start: usize, left: usize, acc: f64, ranks: &[f64], out: &mut Vec<f64>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..ranks.len() {
            choose(i + 1, left - 1, acc + ranks[i], ranks, out);
        }
    }
    let mut sums = Vec::new();
    choose(0, a.len(), 0.0, &ranks, &mut sums);
    for s in sums {
        total += 1;
        if (s - e).abs() >= (w - e).abs() - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn exact_rank_sum_matches_brute_force(
        a in prop::collection::vec(0u8..6, 1..6),
        b in prop::collection::vec(0u8..6, 1..6),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        prop_assert!((r.p_value - oracle_rank_sum_p(&a, &b)).abs() < 1e-12);
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}

#[test]
fn rank_sum_worked_example() {
    let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(r.statistic, 6.0);
    assert!((r.p_value - 0.1).abs() < 1e-15);
    assert_eq!(oracle_rank_sum_p(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 0.1);
}

/// At N = 12 the two paths agree within 0.02 for splits from 4/8 to 6/6.
/// Very unbalanced splits (1/11, 2/10) differ more; the normal
/// approximation is poor there and exact enumeration is used.
#[test]
fn exact_and_normal_agree_at_crossover() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for na in 4..=6 {
        for _ in 0..400 {
            let all: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let shift = rng.random_range(0.0..1.0);
            let a: Vec<f64> = all[..na].iter().map(|v| v + shift).collect();
            let b = &all[na..];
            let e = wilcoxon_exact(&a, b).unwrap().p_value;
            let n = wilcoxon_normal(&a, b).unwrap().p_value;
            worst = worst.max((e - n).abs());
        }
    }
    assert!(worst <= 0.02, "max |dp| = {worst}");
}

fn two_group(a: &[f64], b: &[f64]) -> Dataset {
    let mut d = Dataset::new();
    for (i, v) in a.iter().chain(b).enumerate() {
        let id = format!("p{i:03}");
        let attention = if i < a.len() { Attention::Focus } else { Attention::Ambient };
        let feedback = if i % 2 == 0 { Feedback::Dynamic } else { Feedback::Static };
        d.add_participant(&id, Condition::new(attention, feedback)).unwrap();
        d.insert(&id, Measure::Use, 1, *v).unwrap();
    }
    d
}

#[test]
fn separated_groups_are_significant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..9).map(|_| n.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..9).map(|_| 5.0 + n.sample(&mut rng)).collect();
    let r = perm_test_main(&two_group(&a, &b), Factor::Attention, Measure::Use, 10_000, 9).unwrap();
    assert!(r.p_value <= 0.001, "{}", r.p_value);
    assert!(r.p_value >= 1.0 / 10_001.0);
}

#[test]
fn identical_groups_are_not() {
    let a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
    let r = perm_test_main(&two_group(&a, &a), Factor::Attention, Measure::Use, 5_000, 2).unwrap();
    assert!(r.p_value > 0.5);
}

#[test]
fn degenerate_levels_are_insufficient() {
    let r = perm_test_main(&two_group(&[1.0], &[2.0, 3.0]), Factor::Attention, Measure::Use, 100, 1);
    assert!(matches!(r, Err(Error::InsufficientData(_))));
}

fn relabel(data: &Dataset, f: impl Fn(&str) -> String) -> Dataset {
    let csv = data.to_csv();
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            out.push_str(line);
        } else {
            let (id, rest) = line.split_once(',').unwrap();
            out.push_str(&format!("{},{rest}", f(id)));
        }
        out.push('\n');
    }
    Dataset::from_csv_str(&out).unwrap()
}

#[test]
fn monotone_relabelling_leaves_p_unchanged() {
    let data = reference_matched(REFERENCE_MATCHED_SEED).unwrap();
    let renamed = relabel(&data, |id| format!("zz-{}-x", id.to_lowercase()));
    let a = analyze_study(&data, 999, 17);
    let b = analyze_study(&renamed, 999, 17);
    assert_eq!(a.entries, b.entries);
}

#[test]
fn p_values_do_not_depend_on_thread_count() {
    let data = null_dataset(9, 4);
    let run = || perm_test_interaction(&data, Factor::Attention, Measure::Hrv, 2000, 8).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(single, many);
    assert_eq!(single, run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn p_floor_and_determinism(seed in any::<u64>(), data_seed in 0u64..1000, n_perm in 1usize..300) {
        let data = null_dataset(4, data_seed);
        for factor in [Factor::Attention, Factor::Feedback, Factor::Time] {
            let r = perm_test_main(&data, factor, Measure::Hrv, n_perm, seed).unwrap();
            prop_assert!(r.p_value >= 1.0 / (n_perm as f64 + 1.0) && r.p_value <= 1.0);
            prop_assert_eq!(r, perm_test_main(&data, factor, Measure::Hrv, n_perm, seed).unwrap());
        }
        let r = perm_test_interaction(&data, Factor::Feedback, Measure::Hrv, n_perm, seed).unwrap();
        prop_assert!(r.p_value >= 1.0 / (n_perm as f64 + 1.0));
    }
}

fn ks_uniform(ps: &mut [f64]) -> f64 {
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    ps.iter()
        .enumerate()
        .map(|(i, &p)| ((i as f64 + 1.0) / n - p).abs().max((p - i as f64 / n).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn null_p_values_look_uniform() {
    let reps = 300;
    let (mut main, mut inter) = (Vec::new(), Vec::new());
    for rep in 0..reps {
        let data = null_dataset(9, 10_000 + rep);
        main.push(perm_test_main(&data, Factor::Feedback, Measure::Hrv, 999, rep).unwrap().p_value);
        inter.push(perm_test_interaction(&data, Factor::Attention, Measure::Hrv, 999, rep).unwrap().p_value);
    }
    // Critical value of the one-sample KS statistic at alpha = .01.
    let crit = 1.63 / (reps as f64).sqrt();
    assert!(ks_uniform(&mut main) < crit);
    assert!(ks_uniform(&mut inter) < crit);
}

#[test]
fn summarize_hand_case() {
    let d = two_group(&[1.0, 2.0, 3.0], &[5.0, 5.0]);
    let s = summarize(&d, Measure::Use, &[Factor::Attention]);
    let focus = s.iter().find(|c| c.attention == Some(Attention::Focus)).unwrap();
    assert_eq!((focus.mean, focus.sd, focus.n), (Some(2.0), Some(1.0), 3));
}

fn assert_close(got: Option<f64>, want: f64) {
    let got = got.unwrap();
    assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
}

fn pooled(data: &Dataset, measure: Measure, pick: impl Fn(&ParticipantRow, u8) -> bool) -> (f64, f64, usize) {
    let mut v = Vec::new();
    for (_, row) in data.participants() {
        for t in data.times(measure) {
            if let Some(x) = row.value(measure, t) {
                if pick(row, t) {
                    v.push(x);
                }
            }
        }
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd, v.len())
}

#[test]
fn reference_matched_moments() {
    let d = reference_matched(REFERENCE_MATCHED_SEED).unwrap();
    assert_eq!(d.len(), 36);
    let focus = |r: &ParticipantRow| r.attention == Attention::Focus;

    let (m, s, n) = pooled(&d, Measure::Hrv, |r, t| focus(r) && t == 2);
    assert_eq!(n, 18);
    assert_close(Some(m), targets::HRV_FOCUS_BREATHING.0);
    assert_close(Some(s), targets::HRV_FOCUS_BREATHING.1);
    let (m, s, n) = pooled(&d, Measure::Hrv, |r, t| !(focus(r) && t == 2));
    assert_eq!(n, 90 - synthetic::HRV_MISSING);
    assert_close(Some(m), targets::HRV_REST.0);
    assert_close(Some(s), targets::HRV_REST.1);

    let (m, s, _) = pooled(&d, Measure::NbackDelta, |r, _| focus(r));
    assert_close(Some(m), targets::NBACK_DELTA_FOCUS.0);
    assert_close(Some(s), targets::NBACK_DELTA_FOCUS.1);
    let (m, s, _) = pooled(&d, Measure::NbackDelta, |r, _| !focus(r));
    assert_close(Some(m), targets::NBACK_DELTA_AMBIENT.0);
    assert_close(Some(s), targets::NBACK_DELTA_AMBIENT.1);

    let (m, s, _) = pooled(&d, Measure::Stai, |_, t| t == 2);
    assert_close(Some(m), targets::STAI_2.0);
    assert_close(Some(s), targets::STAI_2.1);
    let (m, s, _) = pooled(&d, Measure::Stai, |_, t| t != 2);
    assert_close(Some(m), targets::STAI_OTHER.0);
    assert_close(Some(s), targets::STAI_OTHER.1);
    let (m, s, _) = pooled(&d, Measure::Stai, |r, t| focus(r) && t == 3);
    assert_close(Some(m), targets::STAI_3_FOCUS.0);
    assert_close(Some(s), targets::STAI_3_FOCUS.1);
    // The remaining STAI cells pool to 38.64, not the published 38.5: the
    // three targets above fix it.
    let (m, _, _) = pooled(&d, Measure::Stai, |r, t| !(focus(r) && t == 3));
    assert!((m - 38.64).abs() < 1e-9);
    assert!((m - targets::STAI_REST.0).abs() < 0.2);

    let (m, s, n) = pooled(&d, Measure::Use, |r, _| r.feedback == Feedback::Static);
    assert_eq!(n, 9);
    assert_close(Some(m), targets::USE_STATIC.0);
    assert_close(Some(s), targets::USE_STATIC.1);
    let (m, s, _) = pooled(&d, Measure::Use, |r, _| r.feedback == Feedback::Dynamic);
    assert_close(Some(m), targets::USE_DYNAMIC.0);
    assert_close(Some(s), targets::USE_DYNAMIC.1);

    for (_, row) in d.participants() {
        for t in 1..=3 {
            if let Some(v) = row.value(Measure::Stai, t) {
                assert!((20.0..=80.0).contains(&v));
            }
            if let Some(v) = row.value(Measure::Hrv, t) {
                assert!(v > 0.0);
            }
        }
        if let Some(v) = row.value(Measure::Use, 1) {
            assert!((9.0..=36.0).contains(&v));
        }
        assert_eq!(row.value(Measure::Use, 1).is_some(), row.attention == Attention::Focus);
    }
}

#[test]
fn bundled_csv_is_the_generator_output() {
    assert_eq!(bundled_reference_matched(), reference_matched(REFERENCE_MATCHED_SEED).unwrap());
    assert!(synthetic::BUNDLED_REFERENCE_MATCHED.starts_with("# SYNTHETIC"));
}

#[test]
fn analysis_is_deterministic() {
    let d = bundled_reference_matched();
    let a = analyze_study(&d, 2000, 42);
    let b = analyze_study(&d, 2000, 42);
    assert_eq!(a, b);
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.entries.iter().all(|e| e.p_value().is_some()));
}

/// Participants split 9/9 by attention; Focus gains `gain` more points
/// between the two N-back tasks.
fn nback_gain_dataset(per_group: usize, gain: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut d = Dataset::new();
    for i in 0..2 * per_group {
        let focus = i < per_group;
        let id = format!("p{i:02}");
        let feedback = if i % 2 == 0 { Feedback::Dynamic } else { Feedback::Static };
        let attention = if focus { Attention::Focus } else { Attention::Ambient };
        d.add_participant(&id, Condition::new(attention, feedback)).unwrap();
        let first = 65.0 + 8.0 * z.sample(&mut rng);
        let (m, s) = if focus { (4.21 + gain, 8.36) } else { (4.21, 7.03) };
        d.insert(&id, Measure::Nback, 1, first).unwrap();
        d.insert(&id, Measure::Nback, 2, first + m + s * z.sample(&mut rng)).unwrap();
    }
    d
}

/// Two-sample t-test power, central-t approximation to the noncentral t.
fn analytic_power(per_group: usize, gain: f64, sd_a: f64, sd_b: f64, alpha: f64) -> f64 {
    let df = 2.0 * per_group as f64 - 2.0;
    let t = StudentsT::new(0.0, 1.0, df).unwrap();
    let sd = ((sd_a * sd_a + sd_b * sd_b) / 2.0).sqrt();
    let ncp = gain / (sd * (2.0 / per_group as f64).sqrt());
    let crit = t.inverse_cdf(1.0 - alpha / 2.0);
    1.0 - t.cdf(crit - ncp) + t.cdf(-crit - ncp)
}

fn simulated_power(per_group: usize, gain: f64, reps: u64) -> f64 {
    let hits = (0..reps)
        .filter(|&r| {
            let d = nback_gain_dataset(per_group, gain, 500 + r);
            perm_test_interaction(&d, Factor::Attention, Measure::Nback, 999, r).unwrap().p_value < 0.01
        })
        .count();
    hits as f64 / reps as f64
}

#[test]
fn interaction_power_matches_analytic_oracle() {
    let oracle = analytic_power(9, 7.0, 8.36, 7.03, 0.01);
    let sim = simulated_power(9, 7.0, 400);
    assert!((sim - oracle).abs() < 0.07, "simulated {sim}, analytic {oracle}");
}

/// The documented power target for a +7 pp Focus gain: p < .01 in at
/// least 80% of simulations at 9 per group. With the published SDs the
/// achievable power is far lower (see `interaction_power_matches_analytic_oracle`),
/// so this test is expected to fail and is not run by default.
#[test]
#[ignore = "unattainable with the published SDs; analytic power is about 0.2"]
fn interaction_power_reaches_eighty_percent() {
    let sim = simulated_power(9, 7.0, 400);
    assert!(sim >= 0.8, "power {sim}");
}
