use approx::assert_relative_eq;
use bloom_core::biosignal::{artifact_filter, rmssd, sliding_rmssd, IbiSeries, SignalSource};
use proptest::prelude::*;

fn series(ibis: &[f64]) -> IbiSeries {
    IbiSeries::from_intervals(SignalSource::Simulated, ibis).unwrap()
}

/// Straight from the definition, in seconds throughout.
fn naive_rmssd(ibis_ms: &[f64]) -> f64 {
    let s: Vec<f64> = ibis_ms.iter().map(|v| v / 1000.0).collect();
    let mut acc = 0.0;
    for i in 1..s.len() {
        acc += (s[i] - s[i - 1]) * (s[i] - s[i - 1]);
    }
    (acc / (s.len() - 1) as f64).sqrt()
}

fn ibis(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(300.0..2000.0f64, 2..max_len)
}

fn int_ibis(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((300u32..2000).prop_map(f64::from), 2..max_len)
}

proptest! {
    #[test]
    fn matches_naive_oracle(v in ibis(500)) {
        let got = rmssd(&series(&v)).unwrap().value_s;
        let want = naive_rmssd(&v);
        prop_assert!(got >= 0.0);
        if want == 0.0 {
            prop_assert_eq!(got, 0.0);
        } else {
            prop_assert!(((got - want) / want).abs() < 1e-12, "{} vs {}", got, want);
        }
    }

    #[test]
    fn integer_offset_is_exact(v in int_ibis(200), c in -250i32..1000) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c as f64).collect();
        prop_assert_eq!(rmssd(&series(&v)).unwrap().value_s, rmssd(&series(&shifted)).unwrap().value_s);
    }

    #[test]
    fn scale_equivariance(v in ibis(200), k in 0.2..3.0f64) {
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        let a = rmssd(&series(&v)).unwrap().value_s;
        let b = rmssd(&series(&scaled)).unwrap().value_s;
        prop_assert!((b - k * a).abs() <= 1e-12 * (k * a).max(f64::MIN_POSITIVE));
    }

    #[test]
    fn reversal_invariance(v in int_ibis(200)) {
        let r: Vec<f64> = v.iter().rev().copied().collect();
        prop_assert_eq!(rmssd(&series(&v)).unwrap().value_s, rmssd(&series(&r)).unwrap().value_s);
    }

    #[test]
    fn reversal_invariance_real(v in ibis(200)) {
        let r: Vec<f64> = v.iter().rev().copied().collect();
        let (a, b) = (rmssd(&series(&v)).unwrap().value_s, rmssd(&series(&r)).unwrap().value_s);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn filter_is_idempotent(v in prop::collection::vec(300.0..2000.0f64, 0..300), thr in 0.05..0.5f64) {
        let once = artifact_filter(&series_or_empty(&v), thr).unwrap();
        let twice = artifact_filter(&once, thr).unwrap();
        prop_assert_eq!(once.samples(), twice.samples());
    }

    #[test]
    fn filter_keeps_order_and_never_adds(v in prop::collection::vec(300.0..2000.0f64, 0..300)) {
        let s = series_or_empty(&v);
        let f = artifact_filter(&s, 0.2).unwrap();
        prop_assert!(f.len() <= s.len());
        prop_assert!(f.samples().windows(2).all(|w| w[0].t_ms < w[1].t_ms));
        prop_assert!(f.samples().iter().all(|x| s.samples().contains(x)));
    }

    #[test]
    fn sliding_windows_agree_with_direct_rmssd(v in ibis(300), w in 5.0..60.0f64, step in 1.0..30.0f64) {
        let s = series(&v);
        for win in sliding_rmssd(&s, w, step).unwrap() {
            let (a, b) = win.window.unwrap();
            let direct = rmssd(&s.window(a, b)).unwrap();
            prop_assert_eq!(direct.value_s, win.value_s);
            prop_assert_eq!(direct.n_intervals, win.n_intervals);
        }
    }
}

fn series_or_empty(v: &[f64]) -> IbiSeries {
    if v.is_empty() {
        IbiSeries::new(SignalSource::Replay)
    } else {
        series(v)
    }
}

#[test]
fn constant_series_is_exactly_zero() {
    for len in [2, 3, 17, 500] {
        assert_eq!(rmssd(&series(&vec![812.5; len])).unwrap().value_s, 0.0);
    }
}

#[test]
fn alternating_series() {
    // |d| = 100 ms everywhere.
    let v: Vec<f64> = (0..101).map(|i| if i % 2 == 0 { 800.0 } else { 900.0 }).collect();
    assert_relative_eq!(rmssd(&series(&v)).unwrap().value_s, 0.1, max_relative = 1e-15);
}
