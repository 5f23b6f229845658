//! The fixed analysis battery and its text and table renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Factor, Measure};
use super::descriptive::{mean_sd, summarize, CellSummary};
use super::permutation::{perm_test_between_interaction, perm_test_interaction, perm_test_main, Effect, TestResult};
use super::wilcoxon::wilcoxon_rank_sum;
use crate::error::Result;
use crate::protocol::{Attention, Feedback};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Tested(TestResult),
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub measure: Measure,
    pub effect: Effect,
    pub outcome: Outcome,
}

impl BatteryEntry {
    pub fn p_value(&self) -> Option<f64> {
        match &self.outcome {
            Outcome::Tested(r) => Some(r.p_value),
            Outcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl GroupStats {
    fn of(values: &[f64]) -> Self {
        let (mean, sd) = mean_sd(values);
        Self { mean, sd, n: values.len() }
    }
}

/// One cell against the pooled observations of all other cells. The
/// rank-sum test treats every observation as independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub name: String,
    pub measure: Measure,
    pub cell: GroupStats,
    pub rest: GroupStats,
    pub result: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n_participants: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub entries: Vec<BatteryEntry>,
    pub descriptives: Vec<(Measure, Vec<CellSummary>)>,
    pub contrasts: Vec<Contrast>,
}

/// The battery in report order.
pub const BATTERY: [(Measure, Effect); 12] = [
    (Measure::Hrv, Effect::Main { factor: Factor::Attention }),
    (Measure::Hrv, Effect::Main { factor: Factor::Feedback }),
    (Measure::Hrv, Effect::Main { factor: Factor::Time }),
    (Measure::Hrv, Effect::Interaction { a: Factor::Attention, b: Factor::Time }),
    (Measure::Hrv, Effect::Interaction { a: Factor::Feedback, b: Factor::Time }),
    (Measure::NbackDelta, Effect::Main { factor: Factor::Attention }),
    (Measure::NbackDelta, Effect::Main { factor: Factor::Feedback }),
    (Measure::NbackDelta, Effect::Interaction { a: Factor::Attention, b: Factor::Feedback }),
    (Measure::Stai, Effect::Main { factor: Factor::Time }),
    (Measure::Stai, Effect::Interaction { a: Factor::Attention, b: Factor::Time }),
    (Measure::Stai, Effect::Interaction { a: Factor::Feedback, b: Factor::Time }),
    (Measure::Use, Effect::RankSum),
];

/// Seed for battery entry `index`.
fn entry_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_entry(data: &Dataset, measure: Measure, effect: Effect, n_perm: usize, seed: u64) -> Result<TestResult> {
    match effect {
        Effect::Main { factor } => perm_test_main(data, factor, measure, n_perm, seed),
        Effect::Interaction { a, b: Factor::Time } => perm_test_interaction(data, a, measure, n_perm, seed),
        Effect::Interaction { .. } => perm_test_between_interaction(data, measure, n_perm, seed),
        Effect::RankSum => {
            let (stat, dynamic) = use_by_feedback(data);
            wilcoxon_rank_sum(&stat, &dynamic)
        }
    }
}

/// USE totals of Static and Dynamic participants.
fn use_by_feedback(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new());
    for (_, row) in data.participants() {
        if let Some(v) = row.value(Measure::Use, 1) {
            match row.feedback {
                Feedback::Static => out.0.push(v),
                Feedback::Dynamic => out.1.push(v),
            }
        }
    }
    out
}

fn contrast<F>(data: &Dataset, name: &str, measure: Measure, in_cell: F) -> Contrast
where
    F: Fn(Attention, u8) -> bool,
{
    let (mut cell, mut rest) = (Vec::new(), Vec::new());
    for (_, row) in data.participants() {
        for t in data.times(measure) {
            if let Some(v) = row.value(measure, t) {
                if in_cell(row.attention, t) {
                    cell.push(v);
                } else {
                    rest.push(v);
                }
            }
        }
    }
    Contrast {
        name: name.to_string(),
        measure,
        cell: GroupStats::of(&cell),
        rest: GroupStats::of(&rest),
        result: wilcoxon_rank_sum(&cell, &rest).ok(),
    }
}

pub fn analyze_study(data: &Dataset, n_perm: usize, seed: u64) -> StudyReport {
    let entries = BATTERY
        .iter()
        .enumerate()
        .map(|(i, &(measure, effect))| {
            let outcome = if !data.has_measure(measure) {
                Outcome::Skipped { reason: format!("no {measure} values") }
            } else {
                match run_entry(data, measure, effect, n_perm, entry_seed(seed, i)) {
                    Ok(r) => Outcome::Tested(r),
                    Err(e) => Outcome::Skipped { reason: e.to_string() },
                }
            };
            BatteryEntry { measure, effect, outcome }
        })
        .collect();

    let all = [Factor::Attention, Factor::Feedback, Factor::Time];
    let descriptives = [
        (Measure::Hrv, &[Factor::Attention, Factor::Time][..]),
        (Measure::Hrv, &all[..]),
        (Measure::NbackDelta, &[Factor::Attention][..]),
        (Measure::NbackDelta, &[Factor::Attention, Factor::Feedback][..]),
        (Measure::Stai, &[Factor::Time][..]),
        (Measure::Stai, &[Factor::Attention, Factor::Time][..]),
        (Measure::Use, &[Factor::Feedback][..]),
    ]
    .into_iter()
    .filter(|(m, _)| data.has_measure(*m))
    .map(|(m, g)| (m, summarize(data, m, g)))
    .collect();

    let mut contrasts = Vec::new();
    if data.has_measure(Measure::Hrv) {
        contrasts.push(contrast(data, "HRV focus breathing vs rest", Measure::Hrv, |a, t| {
            a == Attention::Focus && t == 2
        }));
    }
    if data.has_measure(Measure::Stai) {
        contrasts.push(contrast(data, "STAI-2 vs other times", Measure::Stai, |_, t| t == 2));
        contrasts.push(contrast(data, "STAI-3 focus vs rest", Measure::Stai, |a, t| a == Attention::Focus && t == 3));
    }

    StudyReport { n_participants: data.len(), n_perm, seed, entries, descriptives, contrasts }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |v| format!("{v:.4}"))
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

impl StudyReport {
    pub fn entry(&self, measure: Measure, effect: Effect) -> Option<&BatteryEntry> {
        self.entries.iter().find(|e| e.measure == measure && e.effect == effect)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Study analysis: {} participants, {} permutations, seed {}", self.n_participants, self.n_perm, self.seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "Tests");
        for e in &self.entries {
            let label = format!("{:<12} {:<22}", e.measure.name(), e.effect.to_string());
            match &e.outcome {
                Outcome::Tested(r) => {
                    let _ = writeln!(s, "  {label} stat={:<12.6} p={:.4} {}", r.statistic, r.p_value, stars(r.p_value));
                }
                Outcome::Skipped { reason } => {
                    let _ = writeln!(s, "  {label} skipped ({reason})");
                }
            }
        }
        if !self.contrasts.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Contrasts");
            for c in &self.contrasts {
                let p = c.result.map_or("NA".to_string(), |r| format!("{:.4}", r.p_value));
                let _ = writeln!(
                    s,
                    "  {:<28} M={} SD={} n={} vs M={} SD={} n={} p={p}",
                    c.name,
                    fmt_opt(c.cell.mean),
                    fmt_opt(c.cell.sd),
                    c.cell.n,
                    fmt_opt(c.rest.mean),
                    fmt_opt(c.rest.sd),
                    c.rest.n
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Descriptives");
        for (m, cells) in &self.descriptives {
            for c in cells {
                let _ = writeln!(
                    s,
                    "  {:<12} {:<24} M={} SD={} n={}",
                    m.name(),
                    c.label(),
                    fmt_opt(c.mean),
                    fmt_opt(c.sd),
                    c.n
                );
            }
        }
        s
    }

    /// Machine-readable battery table.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["measure", "effect", "status", "statistic", "p_value", "n_permutations", "seed", "method"])
            .expect("in-memory write");
        for e in &self.entries {
            let effect = e.effect.to_string();
            match &e.outcome {
                Outcome::Tested(r) => {
                    let method = serde_json::to_value(r.method).expect("serializes");
                    w.write_record([
                        e.measure.name(),
                        &effect,
                        "tested",
                        &r.statistic.to_string(),
                        &r.p_value.to_string(),
                        &r.n_permutations.to_string(),
                        &r.seed.map_or(String::new(), |s| s.to_string()),
                        method.as_str().unwrap_or_default(),
                    ])
                }
                Outcome::Skipped { .. } => w.write_record([e.measure.name(), &effect, "skipped", "", "", "", "", ""]),
            }
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}
