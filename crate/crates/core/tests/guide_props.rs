use bloom_core::biosignal::{IbiSample, IbiSeries, SignalSource};
use bloom_core::guide::*;
use proptest::prelude::*;

fn dt_steps() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..5000, 1..200)
}

/// Splits 60 000 ms into random positive pieces.
fn minute_partition() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..60_000, 0..300).prop_map(|mut cuts| {
        cuts.push(0);
        cuts.push(60_000);
        cuts.sort_unstable();
        cuts.dedup();
        cuts.windows(2).map(|w| w[1] - w[0]).collect()
    })
}

fn mode() -> impl Strategy<Value = GuideMode> {
    prop_oneof![
        (3.0..15.0f64).prop_map(|r| GuideMode::Static { rate_bpm: r }),
        (8.0..25.0f64).prop_map(GuideMode::dynamic),
    ]
}

proptest! {
    #[test]
    fn static_six_is_six_cycles_per_minute(parts in minute_partition(), start in 0u64..1_000_000) {
        let mode = GuideMode::static_default();
        let mut s = GuideState::new(start);
        let before = s.total_cycles();
        for dt in parts {
            s = step(s, dt, &mode);
        }
        prop_assert!((s.total_cycles() - before - 6.0).abs() < 1e-9, "{}", s.total_cycles());
        prop_assert_eq!(s.t_ms, start + 60_000);
    }

    #[test]
    fn phase_advances_only_by_rate_times_dt(
        steps in prop::collection::vec((1u64..3000, mode(), prop::option::of(40.0..180.0f64)), 1..100)
    ) {
        let mut s = GuideState::new(0);
        for (dt, mode, hr) in steps {
            if let Some(hr) = hr {
                s.smoothed_hr_bpm = Some(hr);
            }
            let next = step(s, dt, &mode);
            prop_assert!((0.0..1.0).contains(&next.phase));
            let advance = next.total_cycles() - s.total_cycles();
            let expected = next.br_bpm / 60_000.0 * dt as f64;
            prop_assert!((advance - expected).abs() < 1e-9, "{} vs {}", advance, expected);
            s = next;
        }
    }

    #[test]
    fn dynamic_rate_stays_in_clamp(hr in 1.0..400.0f64, delta in 8.0..25.0f64, dts in dt_steps()) {
        let mode = GuideMode::dynamic(delta);
        let mut s = GuideState { smoothed_hr_bpm: Some(hr), ..GuideState::new(0) };
        for dt in dts {
            s = step(s, dt, &mode);
            prop_assert!(s.br_bpm >= DEFAULT_CLAMP.min_bpm && s.br_bpm <= DEFAULT_CLAMP.max_bpm);
        }
    }

    #[test]
    fn smoothed_hr_tracks_beats(ibis in prop::collection::vec(400.0..1500.0f64, 1..200)) {
        let mut s = GuideState::new(0);
        let mut t = 0;
        let (lo, hi) = ibis.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(60_000.0 / x), b.max(60_000.0 / x)));
        for ibi in ibis {
            t += ibi.round() as u64;
            s = smooth_hr(s, IbiSample { t_ms: t, ibi_ms: ibi }, DEFAULT_TAU_S);
            let hr = s.smoothed_hr_bpm.unwrap();
            prop_assert!(hr >= lo - 1e-9 && hr <= hi + 1e-9);
        }
    }

    #[test]
    fn frame_intensities_bounded(phase in 0.0..1.0f64, n in 2usize..32, inhale in 0.1..0.9f64) {
        let f = phase_to_frame_with(phase, n, inhale).unwrap();
        prop_assert_eq!(f.intensities.len(), n);
        prop_assert!(f.intensities.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn peak_moves_out_then_in(a in 0.0..1.0f64, b in 0.0..1.0f64, n in 2usize..32) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let peak = |p: f64| phase_to_frame(p, n).unwrap().peak();
        if hi < 0.5 {
            prop_assert!(peak(lo) <= peak(hi));
        }
        if lo >= 0.5 {
            prop_assert!(peak(lo) >= peak(hi));
        }
    }

    #[test]
    fn resonance_pick_is_brute_force_max(
        amps in prop::collection::vec(0u32..50, 1..8)
    ) {
        let rates: Vec<f64> = (0..amps.len()).map(|i| 4.0 + 0.5 * i as f64).collect();
        let recs: Vec<IbiSeries> = amps
            .iter()
            .map(|&a| {
                let v: Vec<f64> = (0..80).map(|i| 850.0 + if i % 2 == 0 { a as f64 } else { 0.0 }).collect();
                IbiSeries::from_intervals(SignalSource::Simulated, &v).unwrap()
            })
            .collect();
        let CalibrationResult::ResonanceSweep { rate_bpm, per_candidate_rmssd } = calibrate_resonance(&rates, &recs).unwrap() else {
            panic!("wrong variant");
        };
        let best = per_candidate_rmssd.iter().map(|c| c.1).fold(f64::MIN, f64::max);
        let slowest_best = per_candidate_rmssd.iter().filter(|c| c.1 == best).map(|c| c.0).fold(f64::MAX, f64::min);
        prop_assert_eq!(rate_bpm, slowest_best);
    }
}

#[test]
fn coupling_examples_exact() {
    assert_eq!(target_br(90.0, 12.0, DEFAULT_CLAMP).unwrap(), 7.5);
    assert_eq!(target_br(90.0, 15.0, DEFAULT_CLAMP).unwrap(), 6.0);
}

#[test]
fn dynamic_default_at_ninety_is_six() {
    let s = GuideState { smoothed_hr_bpm: Some(90.0), ..GuideState::new(0) };
    assert_eq!(step(s, 100, &GuideMode::dynamic(15.0)).br_bpm, 6.0);
}
