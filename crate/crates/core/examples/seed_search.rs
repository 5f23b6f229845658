//! Scans generator seeds for the reference-matched dataset and picks the one
//! that reproduces the published significance pattern most reliably.
//!
//! 1. Screen: one short analysis per seed.
//! 2. Confirm: one long analysis under another permutation seed; the
//!    pattern must still hold.
//! 3. Rank: the closest call is the ΔN-back attention entry, whose p sits
//!    just under .01 for every seed. The best confirmed candidates are
//!    re-estimated with a fresh permutation seed, so the ranking is not
//!    biased by the draws that selected them.
//!
//! cargo run --release -p bloom-core --example seed_search -- [count]

use bloom_core::stats::synthetic::reference_matched;
use bloom_core::stats::{analyze_study, perm_test_main, Dataset, Effect, Factor, Measure, StudyReport};

const SCREEN: (usize, u64) = (2_000, 1);
const CONFIRM: (usize, u64) = (100_000, 7777);
const RANK: (usize, u64) = (1_000_000, 4242);
const RANKED: usize = 8;

/// Upper bound on p (significant entries) or lower bound (the rest).
fn limits(measure: Measure, effect: Effect) -> (f64, bool) {
    use Effect::*;
    use Factor::*;
    match (measure, effect) {
        (Measure::Hrv, Interaction { a: Attention, b: Time }) => (0.05, true),
        (Measure::NbackDelta, Main { factor: Attention }) => (0.01, true),
        (Measure::Stai, Main { factor: Time }) => (0.01, true),
        (Measure::Stai, Interaction { a: Attention, b: Time }) => (0.01, true),
        _ => (0.05, false),
    }
}

fn pattern(report: &StudyReport) -> bool {
    report.entries.iter().all(|e| {
        let Some(p) = e.p_value() else { return false };
        match limits(e.measure, e.effect) {
            (alpha, true) => p < alpha,
            (alpha, false) => p > alpha,
        }
    })
}

fn nback_p(data: &Dataset, (n_perm, seed): (usize, u64)) -> f64 {
    perm_test_main(data, Factor::Attention, Measure::NbackDelta, n_perm, seed).unwrap().p_value
}

fn main() {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let (mut generated, mut screened, mut confirmed) = (0, 0, Vec::new());
    for seed in 0..count {
        let Ok(data) = reference_matched(seed) else { continue };
        generated += 1;
        if !pattern(&analyze_study(&data, SCREEN.0, SCREEN.1)) {
            continue;
        }
        screened += 1;
        if pattern(&analyze_study(&data, CONFIRM.0, CONFIRM.1)) {
            confirmed.push((nback_p(&data, CONFIRM), seed));
        }
    }
    println!("seeds scanned: {count}, generated: {generated}");
    println!("pattern on screening: {screened} ({:.1}% of generated)", 100.0 * screened as f64 / generated as f64);
    println!("pattern on confirmation: {}", confirmed.len());
    confirmed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranked: Vec<(f64, u64)> = confirmed
        .iter()
        .take(RANKED)
        .map(|&(_, seed)| (nback_p(&reference_matched(seed).unwrap(), RANK), seed))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (p, seed) in &ranked {
        println!("seed {seed}: ΔN-back attention p = {p:.5} at {} permutations", RANK.0);
    }
    if let Some((_, best)) = ranked.first() {
        println!("best seed: {best}");
    }
}
