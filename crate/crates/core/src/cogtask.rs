//! N-back sequence generation and scoring.
//!
//! Each letter is shown for `display_ms` at onsets `onset_interval_ms`
//! apart. The participant answers left when the letter matches the one `n`
//! positions earlier and right otherwise. The first `n` positions of every
//! sequence have no defined answer and are never scored; a training
//! sequence, when present, comes first and is excluded from the score.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_GENERATION_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBackConfig {
    pub n: usize,
    pub letters_per_seq: usize,
    pub seqs_per_task: usize,
    pub training_seqs: usize,
    pub display_ms: u64,
    pub onset_interval_ms: u64,
    pub target_fraction: f64,
    pub alphabet: Vec<char>,
    /// Upper bound on accidental `n - 1` / `n + 1` matches per sequence.
    /// `None` leaves lures unconstrained.
    pub lure_cap: Option<usize>,
    pub seed: u64,
}

impl Default for NBackConfig {
    fn default() -> Self {
        Self {
            n: 2,
            letters_per_seq: 30,
            seqs_per_task: 3,
            training_seqs: 0,
            display_ms: 500,
            onset_interval_ms: 2000,
            target_fraction: 1.0 / 3.0,
            alphabet: "BCDFGHJKLM".chars().collect(),
            lure_cap: None,
            seed: 0,
        }
    }
}

impl NBackConfig {
    pub fn with_training(mut self) -> Self {
        self.training_seqs = 1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        if self.letters_per_seq <= self.n {
            return Err(Error::Domain("sequences must be longer than n".into()));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return Err(Error::Domain("target fraction must lie in (0, 1)".into()));
        }
        if self.display_ms >= self.onset_interval_ms {
            return Err(Error::Domain("display time must be shorter than the onset interval".into()));
        }
        if self.training_seqs > 1 {
            return Err(Error::Domain("at most one training sequence".into()));
        }
        Ok(())
    }

    /// Targets per sequence.
    pub fn target_count(&self) -> usize {
        (self.target_fraction * (self.letters_per_seq - self.n) as f64).round() as usize
    }

    pub fn onset_ms(&self, position: usize) -> u64 {
        position as u64 * self.onset_interval_ms
    }

    pub fn offset_ms(&self, position: usize) -> u64 {
        self.onset_ms(position) + self.display_ms
    }

    /// Length of one sequence from first onset to the end of the last answer window.
    pub fn sequence_duration_ms(&self) -> u64 {
        self.letters_per_seq as u64 * self.onset_interval_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Key {
    Target,
    NonTarget,
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Button {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSequence {
    pub letters: Vec<char>,
    pub key: Vec<Key>,
    pub training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusPlan {
    pub n: usize,
    pub sequences: Vec<StimulusSequence>,
}

impl StimulusPlan {
    /// Rebuilds a plan from letters alone; the leading `training_seqs`
    /// sequences are flagged as training.
    pub fn from_letters(n: usize, sequences: Vec<Vec<char>>, training_seqs: usize) -> Self {
        let sequences = sequences
            .into_iter()
            .enumerate()
            .map(|(i, letters)| StimulusSequence { key: key_for(&letters, n), letters, training: i < training_seqs })
            .collect();
        Self { n, sequences }
    }

    pub fn scored_positions(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| !s.training)
            .map(|s| s.key.iter().filter(|k| **k != Key::Undefined).count())
            .sum()
    }
}

pub fn key_for(letters: &[char], n: usize) -> Vec<Key> {
    (0..letters.len())
        .map(|i| {
            if i < n {
                Key::Undefined
            } else if letters[i] == letters[i - n] {
                Key::Target
            } else {
                Key::NonTarget
            }
        })
        .collect()
}

/// Counts positions matching the letter `n - 1` or `n + 1` back.
pub fn lure_count(letters: &[char], n: usize) -> usize {
    (n..letters.len())
        .filter(|&i| {
            letters[i] != letters[i - n]
                && ((n > 1 && letters[i] == letters[i - n + 1]) || (i > n && letters[i] == letters[i - n - 1]))
        })
        .count()
}

pub fn generate_plan(config: &NBackConfig) -> Result<StimulusPlan> {
    config.validate()?;
    let mut alphabet = config.alphabet.clone();
    alphabet.sort_unstable();
    alphabet.dedup();
    let need = if config.lure_cap.is_some() { 4 } else { 2 };
    if alphabet.len() < need {
        return Err(Error::Generation(format!(
            "alphabet of {} letters cannot produce non-targets (need {need})",
            alphabet.len()
        )));
    }
    let targets = config.target_count();
    if targets > config.letters_per_seq - config.n {
        return Err(Error::Generation("more targets than scorable positions".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.seqs_per_task + config.training_seqs;
    let mut sequences = Vec::with_capacity(total);
    for i in 0..total {
        let letters = generate_sequence(config, &alphabet, targets, &mut rng)?;
        sequences.push(StimulusSequence {
            key: key_for(&letters, config.n),
            letters,
            training: i < config.training_seqs,
        });
    }
    Ok(StimulusPlan { n: config.n, sequences })
}

fn generate_sequence(config: &NBackConfig, alphabet: &[char], targets: usize, rng: &mut ChaCha8Rng) -> Result<Vec<char>> {
    let n = config.n;
    let len = config.letters_per_seq;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut is_target = vec![false; len];
        for idx in sample(rng, len - n, targets) {
            is_target[idx + n] = true;
        }
        let mut letters: Vec<char> = Vec::with_capacity(len);
        for (i, &target) in is_target.iter().enumerate() {
            let letter = if i >= n && target {
                letters[i - n]
            } else {
                let mut banned: Vec<char> = Vec::new();
                if i >= n {
                    banned.push(letters[i - n]);
                    if config.lure_cap.is_some() {
                        if n > 1 {
                            banned.push(letters[i - n + 1]);
                        }
                        if i > n {
                            banned.push(letters[i - n - 1]);
                        }
                    }
                }
                let choices: Vec<char> = alphabet.iter().copied().filter(|c| !banned.contains(c)).collect();
                choices[rng.random_range(0..choices.len())]
            };
            letters.push(letter);
        }
        match config.lure_cap {
            Some(cap) if lure_count(&letters, n) > cap => continue,
            _ => return Ok(letters),
        }
    }
    Err(Error::Generation(format!("no sequence within lure cap after {MAX_GENERATION_ATTEMPTS} attempts")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub seq_index: usize,
    pub position: usize,
    pub button: Button,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub correct: usize,
    pub incorrect: usize,
    pub missed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub pct_correct: f64,
    pub per_sequence: Vec<f64>,
    pub counts: ScoreCounts,
}

/// Whether `button` is the right answer for `key`. Undefined positions have
/// no right answer.
pub fn is_correct(key: Key, button: Button) -> Option<bool> {
    match key {
        Key::Target => Some(button == Button::Left),
        Key::NonTarget => Some(button == Button::Right),
        Key::Undefined => None,
    }
}

/// Scores responses against a plan. Only the first response to a position
/// counts; unanswered positions are missed and count against the score.
pub fn score(plan: &StimulusPlan, responses: &[ResponseEvent], config: &NBackConfig) -> Result<TaskScore> {
    let mut answered: Vec<Vec<Option<Button>>> = plan.sequences.iter().map(|s| vec![None; s.letters.len()]).collect();
    for r in responses {
        let slot = answered
            .get_mut(r.seq_index)
            .and_then(|seq| seq.get_mut(r.position))
            .ok_or_else(|| Error::Validation(format!("response to unknown position {}:{}", r.seq_index, r.position)))?;
        if !(r.latency_ms >= 0.0 && r.latency_ms <= config.onset_interval_ms as f64) {
            return Err(Error::Validation(format!("latency {} ms outside the answer window", r.latency_ms)));
        }
        if slot.is_none() {
            *slot = Some(r.button);
        }
    }

    let mut counts = ScoreCounts::default();
    let mut per_sequence = Vec::new();
    for (seq, buttons) in plan.sequences.iter().zip(&answered) {
        if seq.training {
            continue;
        }
        let mut seq_counts = ScoreCounts::default();
        for (&key, &button) in seq.key.iter().zip(buttons) {
            if key == Key::Undefined {
                continue;
            }
            match button.map(|b| is_correct(key, b) == Some(true)) {
                Some(true) => seq_counts.correct += 1,
                Some(false) => seq_counts.incorrect += 1,
                None => seq_counts.missed += 1,
            }
        }
        per_sequence.push(pct(seq_counts));
        counts.correct += seq_counts.correct;
        counts.incorrect += seq_counts.incorrect;
        counts.missed += seq_counts.missed;
    }
    Ok(TaskScore { pct_correct: pct(counts), per_sequence, counts })
}

fn pct(c: ScoreCounts) -> f64 {
    let total = c.correct + c.incorrect + c.missed;
    if total == 0 {
        0.0
    } else {
        100.0 * c.correct as f64 / total as f64
    }
}

/// Change in accuracy between two tasks, in percentage points.
pub fn delta_performance(first: &TaskScore, second: &TaskScore) -> f64 {
    second.pct_correct - first.pct_correct
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answer_all(plan: &StimulusPlan, mut pick: impl FnMut(Key, usize) -> Option<Button>) -> Vec<ResponseEvent> {
        let mut out = Vec::new();
        let mut k = 0;
        for (si, seq) in plan.sequences.iter().enumerate() {
            for (pos, &key) in seq.key.iter().enumerate() {
                if let Some(button) = pick(key, k) {
                    out.push(ResponseEvent { seq_index: si, position: pos, button, latency_ms: 600.0 });
                }
                k += 1;
            }
        }
        out
    }

    fn right_answer(key: Key) -> Button {
        if key == Key::Target {
            Button::Left
        } else {
            Button::Right
        }
    }

    fn flip(b: Button) -> Button {
        match b {
            Button::Left => Button::Right,
            Button::Right => Button::Left,
        }
    }

    #[test]
    fn default_plan_structure() {
        let cfg = NBackConfig::default().with_training();
        let plan = generate_plan(&cfg).unwrap();
        assert_eq!(plan.sequences.len(), 4);
        assert!(plan.sequences[0].training);
        assert!(plan.sequences[1..].iter().all(|s| !s.training));
        assert_eq!(cfg.target_count(), 9);
        for seq in &plan.sequences {
            assert_eq!(seq.letters.len(), 30);
            assert_eq!(seq.key.iter().filter(|k| **k == Key::Target).count(), 9);
            assert_eq!(seq.key, key_for(&seq.letters, 2));
        }
        let plain = generate_plan(&NBackConfig::default()).unwrap();
        assert_eq!(plain.sequences.len(), 3);
    }

    #[test]
    fn key_definition() {
        assert_eq!(key_for(&['A', 'A', 'B'], 1), vec![Key::Undefined, Key::Target, Key::NonTarget]);
    }

    #[test]
    fn determinism() {
        let cfg = NBackConfig { seed: 99, ..NBackConfig::default() };
        assert_eq!(generate_plan(&cfg).unwrap(), generate_plan(&cfg).unwrap());
        let other = NBackConfig { seed: 100, ..NBackConfig::default() };
        assert_ne!(generate_plan(&cfg).unwrap(), generate_plan(&other).unwrap());
    }

    #[test]
    fn lure_cap_respected() {
        let cfg = NBackConfig { lure_cap: Some(0), seed: 4, ..NBackConfig::default() };
        let plan = generate_plan(&cfg).unwrap();
        for seq in &plan.sequences {
            assert_eq!(lure_count(&seq.letters, 2), 0);
        }
    }

    #[test]
    fn infeasible_configs() {
        let tiny = NBackConfig { alphabet: vec!['A'], ..NBackConfig::default() };
        assert!(matches!(generate_plan(&tiny), Err(Error::Generation(_))));
        let short = NBackConfig { letters_per_seq: 2, ..NBackConfig::default() };
        assert!(generate_plan(&short).is_err());
        let slow = NBackConfig { display_ms: 2000, ..NBackConfig::default() };
        assert!(generate_plan(&slow).is_err());
    }

    #[test]
    fn timing_schedule() {
        let cfg = NBackConfig::default();
        assert_eq!(cfg.onset_ms(0), 0);
        assert_eq!(cfg.onset_ms(7), 14_000);
        assert_eq!(cfg.offset_ms(7), 14_500);
        assert_eq!(cfg.sequence_duration_ms(), 60_000);
    }

    #[test]
    fn perfect_inverted_and_half() {
        let cfg = NBackConfig::default().with_training();
        let plan = generate_plan(&cfg).unwrap();
        let perfect = answer_all(&plan, |k, _| Some(right_answer(k)));
        assert_eq!(score(&plan, &perfect, &cfg).unwrap().pct_correct, 100.0);

        let inverted = answer_all(&plan, |k, _| Some(flip(right_answer(k))));
        let s = score(&plan, &inverted, &cfg).unwrap();
        assert_eq!(s.pct_correct, 0.0);
        assert_eq!(s.counts.incorrect, 84);

        // Alternate right and wrong over the scored positions only.
        let mut scored = 0usize;
        let half = answer_all(&plan, |k, _| {
            if k == Key::Undefined {
                return Some(Button::Left);
            }
            scored += 1;
            Some(if scored.is_multiple_of(2) { right_answer(k) } else { flip(right_answer(k)) })
        });
        let s = score(&plan, &half, &cfg).unwrap();
        // The 84 scored positions alternate right and wrong.
        assert_eq!(s.counts, ScoreCounts { correct: 42, incorrect: 42, missed: 0 });
        assert_eq!(s.pct_correct, 50.0);
    }

    #[test]
    fn exact_half_fixture() {
        let plan = StimulusPlan::from_letters(1, vec![vec!['A', 'A', 'B', 'B', 'C']; 3], 0);
        let cfg = NBackConfig { n: 1, letters_per_seq: 5, ..NBackConfig::default() };
        // Keys per sequence: U T N T N. Answer positions 1 and 2 correctly, 3 and 4 wrongly.
        let mut responses = Vec::new();
        for s in 0..3 {
            responses.push(ResponseEvent { seq_index: s, position: 1, button: Button::Left, latency_ms: 400.0 });
            responses.push(ResponseEvent { seq_index: s, position: 2, button: Button::Right, latency_ms: 400.0 });
            responses.push(ResponseEvent { seq_index: s, position: 3, button: Button::Right, latency_ms: 400.0 });
            responses.push(ResponseEvent { seq_index: s, position: 4, button: Button::Left, latency_ms: 400.0 });
        }
        let s = score(&plan, &responses, &cfg).unwrap();
        assert_eq!(s.pct_correct, 50.0);
        assert_eq!(s.per_sequence, vec![50.0; 3]);
    }

    #[test]
    fn missed_duplicates_and_training() {
        let plan = StimulusPlan::from_letters(1, vec![vec!['A', 'A', 'B'], vec!['C', 'C', 'D']], 1);
        let cfg = NBackConfig { n: 1, letters_per_seq: 3, ..NBackConfig::default() };
        let responses = vec![
            // Training responses are accepted and ignored.
            ResponseEvent { seq_index: 0, position: 1, button: Button::Right, latency_ms: 500.0 },
            ResponseEvent { seq_index: 1, position: 1, button: Button::Left, latency_ms: 500.0 },
            // Later answer to the same position is ignored.
            ResponseEvent { seq_index: 1, position: 1, button: Button::Right, latency_ms: 900.0 },
        ];
        let s = score(&plan, &responses, &cfg).unwrap();
        assert_eq!(s.counts, ScoreCounts { correct: 1, incorrect: 0, missed: 1 });
        assert_eq!(s.pct_correct, 50.0);
        assert_eq!(s.per_sequence.len(), 1);

        let bad = [ResponseEvent { seq_index: 5, position: 0, button: Button::Left, latency_ms: 1.0 }];
        assert!(score(&plan, &bad, &cfg).is_err());
        let late = [ResponseEvent { seq_index: 1, position: 1, button: Button::Left, latency_ms: 2500.0 }];
        assert!(score(&plan, &late, &cfg).is_err());
    }

    #[test]
    fn delta_sign_convention() {
        let s = |p: f64| TaskScore { pct_correct: p, per_sequence: vec![], counts: ScoreCounts::default() };
        assert!((delta_performance(&s(70.0), &s(81.23)) - 11.23).abs() < 1e-12);
        assert_eq!(delta_performance(&s(64.0), &s(64.0)), 0.0);
        assert_eq!(delta_performance(&s(80.0), &s(75.0)), -5.0);
    }
}
