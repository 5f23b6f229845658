//! The breathing guide.
//!
//! A guide is a phase in `[0, 1)` advancing at the current breathing rate.
//! In static mode the rate is fixed; in dynamic mode it follows the
//! participant's smoothed heart rate divided by a per-participant divider
//! (`BR = HR / delta`). The phase only ever advances by `br / 60000 * dt`,
//! so rate changes never make the animation jump.

use serde::{Deserialize, Serialize};

use crate::biosignal::{mean_hr, rmssd, IbiSample, IbiSeries};
use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 15.0;
pub const STATIC_RATE_BPM: f64 = 6.0;
pub const DEFAULT_CLAMP: BrClamp = BrClamp { min_bpm: 4.0, max_bpm: 12.0 };
pub const DEFAULT_TAU_S: f64 = 5.0;
pub const DEFAULT_INHALE_FRACTION: f64 = 0.5;
pub const DEFAULT_LEDS_PER_PETAL: usize = 8;
pub const MIN_FRAME_RATE_HZ: f64 = 20.0;

/// Multiplicative step applied to the divider by each faster/slower request.
pub const CALIBRATION_STEP: f64 = 1.1;
pub const DELTA_BOUNDS: (f64, f64) = (8.0, 25.0);
/// Minimum recording length per candidate in a resonance sweep.
pub const MIN_SWEEP_RECORD_MS: f64 = 30_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrClamp {
    pub min_bpm: f64,
    pub max_bpm: f64,
}

impl BrClamp {
    pub fn apply(&self, br: f64) -> f64 {
        br.clamp(self.min_bpm, self.max_bpm)
    }
}

impl Default for BrClamp {
    fn default() -> Self {
        DEFAULT_CLAMP
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GuideMode {
    Static { rate_bpm: f64 },
    Dynamic { delta: f64, clamp: BrClamp },
}

impl GuideMode {
    pub fn static_default() -> Self {
        GuideMode::Static { rate_bpm: STATIC_RATE_BPM }
    }

    pub fn dynamic(delta: f64) -> Self {
        GuideMode::Dynamic { delta, clamp: DEFAULT_CLAMP }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GuideMode::Static { rate_bpm } if !(rate_bpm > 0.0 && rate_bpm <= 30.0) => {
                Err(Error::Domain(format!("static rate must lie in (0, 30], got {rate_bpm}")))
            }
            GuideMode::Dynamic { delta, .. } if !(delta > 0.0) => {
                Err(Error::Domain(format!("delta must be positive, got {delta}")))
            }
            GuideMode::Dynamic { clamp, .. } if !(clamp.min_bpm > 0.0 && clamp.min_bpm < clamp.max_bpm) => {
                Err(Error::Domain("clamp must satisfy 0 < min < max".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideState {
    pub phase: f64,
    pub br_bpm: f64,
    pub t_ms: u64,
    /// Exponentially smoothed heart rate; `None` until the first beat.
    pub smoothed_hr_bpm: Option<f64>,
    /// Timestamp of the beat that last updated `smoothed_hr_bpm`.
    pub hr_t_ms: Option<u64>,
    /// Whole breathing cycles completed so far.
    pub cycles: u64,
}

impl GuideState {
    pub fn new(t_ms: u64) -> Self {
        Self { phase: 0.0, br_bpm: STATIC_RATE_BPM, t_ms, smoothed_hr_bpm: None, hr_t_ms: None, cycles: 0 }
    }

    /// Phase accumulated since the start, in cycles.
    pub fn total_cycles(&self) -> f64 {
        self.cycles as f64 + self.phase
    }
}

impl Default for GuideState {
    fn default() -> Self {
        Self::new(0)
    }
}

pub fn target_br(hr_bpm: f64, delta: f64, clamp: BrClamp) -> Result<f64> {
    if !(hr_bpm > 0.0) {
        return Err(Error::Domain(format!("heart rate must be positive, got {hr_bpm}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    Ok(clamp.apply(hr_bpm / delta))
}

/// Folds one beat into the smoothed heart rate.
///
/// Uses an exponential moving average with time constant `tau_s`, weighting
/// each beat by the time elapsed since the previous one, so the response to
/// a step is `1 - exp(-t / tau)` regardless of beat spacing.
pub fn smooth_hr(state: GuideState, sample: IbiSample, tau_s: f64) -> GuideState {
    let hr = sample.hr_bpm();
    let smoothed = match (state.smoothed_hr_bpm, state.hr_t_ms) {
        (Some(prev), Some(last_t)) if sample.t_ms > last_t && tau_s > 0.0 => {
            let dt_s = (sample.t_ms - last_t) as f64 / 1000.0;
            let alpha = 1.0 - (-dt_s / tau_s).exp();
            prev + alpha * (hr - prev)
        }
        (Some(prev), Some(_)) if tau_s > 0.0 => prev,
        _ => hr,
    };
    GuideState { smoothed_hr_bpm: Some(smoothed), hr_t_ms: Some(sample.t_ms), ..state }
}

/// Advances the guide by `dt_ms` milliseconds under `mode`.
///
/// In dynamic mode without any heart rate yet, the previous rate is kept.
pub fn step(state: GuideState, dt_ms: u64, mode: &GuideMode) -> GuideState {
    let br = match *mode {
        GuideMode::Static { rate_bpm } => rate_bpm,
        GuideMode::Dynamic { delta, clamp } => match state.smoothed_hr_bpm {
            Some(hr) => target_br(hr, delta, clamp).unwrap_or(state.br_bpm),
            None => clamp.apply(state.br_bpm),
        },
    };
    let advanced = state.phase + br / 60_000.0 * dt_ms as f64;
    let whole = advanced.floor();
    let mut phase = advanced - whole;
    if phase >= 1.0 {
        phase = 0.0;
    }
    GuideState {
        phase,
        br_bpm: br,
        t_ms: state.t_ms + dt_ms,
        cycles: state.cycles + whole as u64,
        ..state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Inhale: lights travel from the flower centre to the petal tips.
    Outward,
    /// Exhale: lights travel back towards the centre.
    Inward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideFrame {
    pub phase: f64,
    pub direction: Direction,
    /// Light levels in `[0, 1]`, ordered centre to tip.
    pub intensities: Vec<f64>,
}

impl GuideFrame {
    /// Index of the brightest position.
    pub fn peak(&self) -> usize {
        self.intensities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Width of the light bump, in positions.
const BUMP_SIGMA: f64 = 0.6;

pub fn phase_to_frame(phase: f64, n_positions: usize) -> Result<GuideFrame> {
    phase_to_frame_with(phase, n_positions, DEFAULT_INHALE_FRACTION)
}

/// Renders a phase as one petal's light strip. The bump travels centre to
/// tip over the inhale fraction of the cycle and back over the remainder.
pub fn phase_to_frame_with(phase: f64, n_positions: usize, inhale_fraction: f64) -> Result<GuideFrame> {
    if n_positions < 2 {
        return Err(Error::Domain("a petal needs at least 2 light positions".into()));
    }
    if !(inhale_fraction > 0.0 && inhale_fraction < 1.0) {
        return Err(Error::Domain(format!("inhale fraction must lie in (0, 1), got {inhale_fraction}")));
    }
    let phase = phase.rem_euclid(1.0);
    let span = (n_positions - 1) as f64;
    let (direction, pos) = if phase < inhale_fraction {
        (Direction::Outward, phase / inhale_fraction * span)
    } else {
        let back = (phase - inhale_fraction) / (1.0 - inhale_fraction);
        (Direction::Inward, (1.0 - back) * span)
    };
    let intensities = (0..n_positions)
        .map(|i| {
            let z = (i as f64 - pos) / BUMP_SIGMA;
            (-0.5 * z * z).exp()
        })
        .collect();
    Ok(GuideFrame { phase, direction, intensities })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRequest {
    Faster,
    Slower,
    Accept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CalibrationResult {
    Interactive { delta: f64, adjustments: usize },
    ResonanceSweep { rate_bpm: f64, per_candidate_rmssd: Vec<(f64, f64)> },
}

/// Adjusts the divider from a stream of participant requests.
///
/// A faster guide needs a smaller divider, so `Faster` divides by the step
/// and `Slower` multiplies by it. The divider stays within [`DELTA_BOUNDS`].
pub fn calibrate_interactive<I>(initial_delta: f64, events: I) -> Result<CalibrationResult>
where
    I: IntoIterator<Item = CalibrationRequest>,
{
    if !(initial_delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {initial_delta}")));
    }
    let (lo, hi) = DELTA_BOUNDS;
    let mut delta = initial_delta.clamp(lo, hi);
    for (adjustments, event) in events.into_iter().enumerate() {
        delta = match event {
            CalibrationRequest::Faster => (delta / CALIBRATION_STEP).clamp(lo, hi),
            CalibrationRequest::Slower => (delta * CALIBRATION_STEP).clamp(lo, hi),
            CalibrationRequest::Accept => return Ok(CalibrationResult::Interactive { delta, adjustments }),
        };
    }
    Err(Error::CalibrationAbandoned)
}

/// Picks the breathing rate whose recording shows the largest RMSSD.
/// Ties go to the slower rate.
pub fn calibrate_resonance(candidate_rates: &[f64], recordings: &[IbiSeries]) -> Result<CalibrationResult> {
    if candidate_rates.is_empty() || candidate_rates.len() != recordings.len() {
        return Err(Error::Domain("need one recording per candidate rate".into()));
    }
    let mut per_candidate = Vec::with_capacity(candidate_rates.len());
    for (&rate, rec) in candidate_rates.iter().zip(recordings) {
        if !(rate > 0.0) {
            return Err(Error::Domain(format!("candidate rate must be positive, got {rate}")));
        }
        if rec.covered_ms() < MIN_SWEEP_RECORD_MS || rec.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "recording for {rate}/min covers {:.1} s, need 30 s",
                rec.covered_ms() / 1000.0
            )));
        }
        per_candidate.push((rate, rmssd(rec)?.value_s));
    }
    let best = per_candidate
        .iter()
        .copied()
        .reduce(|best, c| match c.1.total_cmp(&best.1) {
            std::cmp::Ordering::Greater => c,
            std::cmp::Ordering::Equal if c.0 < best.0 => c,
            _ => best,
        })
        .expect("non-empty");
    Ok(CalibrationResult::ResonanceSweep { rate_bpm: best.0, per_candidate_rmssd: per_candidate })
}

/// Divider that makes a dynamic guide breathe at `rate_bpm` for a
/// participant whose heart rate sits at `hr_bpm`.
pub fn delta_for_rate(hr_bpm: f64, rate_bpm: f64) -> Result<f64> {
    if !(hr_bpm > 0.0 && rate_bpm > 0.0) {
        return Err(Error::Domain("heart rate and breathing rate must be positive".into()));
    }
    Ok(hr_bpm / rate_bpm)
}

/// Divider for a calibrated rate given a baseline recording.
pub fn delta_from_baseline(baseline: &IbiSeries, rate_bpm: f64) -> Result<f64> {
    delta_for_rate(mean_hr(baseline)?, rate_bpm)
}
