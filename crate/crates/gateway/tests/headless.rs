use bloom_core::protocol::{extract_measures, score_nback_stage, Attention, Feedback, StageKind};
use bloom_core::stats::{Measure, Outcome, BATTERY};
use bloom_core::{Condition, EventKind, SessionLog, SubjectParams};
use bloom_gateway::analyze::analyze;
use bloom_gateway::headless::{run_headless, simulate_study, write_logs, HeadlessConfig};

fn nback_scores(log: &SessionLog) -> Vec<f64> {
    log.plan
        .stages
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s.kind {
            StageKind::Nback { training, .. } => score_nback_stage(log, i, training).unwrap(),
            _ => None,
        })
        .collect()
}

#[test]
fn perfect_subject_focus_static_scores_hundred() {
    let subject = SubjectParams { nback_skill: 1.0, ..SubjectParams::default() };
    let log = run_headless(Condition::new(Attention::Focus, Feedback::Static), &subject, 3);
    assert!(log.completed());
    assert_eq!(nback_scores(&log), vec![100.0, 100.0]);
}

#[test]
fn same_seed_same_log_bytes() {
    let subject = SubjectParams::default();
    for c in Condition::ALL {
        let a = run_headless(c, &subject, 11).to_jsonl();
        let b = run_headless(c, &subject, 11).to_jsonl();
        assert_eq!(a, b, "{c}");
        assert_ne!(a, run_headless(c, &subject, 12).to_jsonl(), "{c}");
    }
}

#[test]
fn every_condition_yields_all_measures() {
    for c in Condition::ALL {
        let log = run_headless(c, &SubjectParams::default(), 5);
        let again = SessionLog::from_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(again, log);
        let rec = extract_measures(&log).unwrap();
        assert!(rec.hrv.iter().all(Option::is_some), "{c}: {:?}", rec.hrv);
        assert!(rec.nback.iter().all(Option::is_some));
        assert!(rec.stai.iter().all(Option::is_some));
        assert_eq!(rec.use_total.is_some(), c.attention == Attention::Focus);
    }
}

#[test]
fn dynamic_focus_calibrates_near_resonance() {
    let log = run_headless(Condition::new(Attention::Focus, Feedback::Dynamic), &SubjectParams::default(), 8);
    let Some(bloom_core::CalibrationResult::ResonanceSweep { rate_bpm, .. }) = log.resonance_sweep() else {
        panic!("no sweep recorded");
    };
    assert_eq!(*rate_bpm, 5.5);
    let delta = log.calibrated_delta().unwrap();
    // Resting heart rate of about 70.6/min paced at 5.5/min.
    assert!((delta - 70.6 / 5.5).abs() < 1.0, "{delta}");
    let frames: Vec<f64> = log
        .events()
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::GuideFrameEmitted { br_bpm, .. } => Some(br_bpm),
            _ => None,
        })
        .collect();
    assert!(!frames.is_empty());
}

#[test]
fn focus_breathing_raises_hrv_for_resonant_subject() {
    let log = run_headless(Condition::new(Attention::Focus, Feedback::Dynamic), &SubjectParams::default(), 21);
    let rec = extract_measures(&log).unwrap();
    let [t1, t2, _] = rec.hrv.map(Option::unwrap);
    assert!(t2 > t1, "{t2} vs {t1}");
}

#[test]
fn simulated_study_flows_into_analysis() {
    let logs = simulate_study(9, 2024, &HeadlessConfig::default()).unwrap();
    assert_eq!(logs.len(), 36);
    for c in Condition::ALL {
        assert_eq!(logs.iter().filter(|l| l.plan.condition == c).count(), 9);
    }
    let dir = tempfile::tempdir().unwrap();
    let paths = write_logs(dir.path(), &logs).unwrap();
    std::fs::write(dir.path().join("broken.jsonl"), "{\"v\":1,\"kind\":\"plan\"}\n").unwrap();
    let analysis = analyze(&[dir.path().to_path_buf()], 500, 1).unwrap();
    assert_eq!(analysis.included.len(), paths.len());
    assert_eq!(analysis.excluded.len(), 1);
    assert!(analysis.excluded[0].0.ends_with("broken.jsonl"));
    assert_eq!(analysis.dataset.len(), 36);
    assert_eq!(analysis.report.entries.len(), BATTERY.len());
    for e in &analysis.report.entries {
        assert!(matches!(e.outcome, Outcome::Tested(_)), "{:?} {:?} skipped", e.measure, e.effect);
    }
    assert!(analysis.dataset.has_measure(Measure::Use));
}

#[test]
fn zero_logs_give_all_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let analysis = analyze(&[dir.path().to_path_buf()], 100, 1).unwrap();
    assert_eq!(analysis.report.entries.len(), BATTERY.len());
    assert!(analysis.report.entries.iter().all(|e| matches!(e.outcome, Outcome::Skipped { .. })));
    let out = tempfile::tempdir().unwrap();
    let files = bloom_gateway::write_report(out.path(), &analysis).unwrap();
    assert_eq!(files.len(), 5);
}

#[test]
fn bundled_dataset_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reference_matched.csv");
    std::fs::write(&path, bloom_core::stats::synthetic::BUNDLED_REFERENCE_MATCHED).unwrap();
    let analysis = analyze(&[path], 2000, 7).unwrap();
    assert_eq!(analysis.dataset.len(), 36);
    let p = |m, e| analysis.report.entry(m, e).and_then(|x| x.p_value()).unwrap();
    use bloom_core::stats::{Effect, Factor};
    assert!(p(Measure::Stai, Effect::Main { factor: Factor::Time }) < 0.01);
    assert!(p(Measure::Use, Effect::RankSum) > 0.05);
}
