//! A simulated subject breathing along with the guide, stepped beat by beat.
//!
//! The guide is advanced to each beat, the subject reads its phase, and the
//! new beat feeds back into the guide's heart-rate smoothing.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biosignal::{mean_hr, IbiSeries, SignalSource};
use crate::error::Result;
use crate::guide::{calibrate_resonance, delta_from_baseline, smooth_hr, step, CalibrationResult, GuideMode, GuideState, DEFAULT_TAU_S};
use crate::subjectsim::{next_ibi, SubjectParams, SubjectState};

#[derive(Debug, Clone)]
pub struct GuidedRun {
    pub series: IbiSeries,
    pub subject: SubjectState,
    pub guide: GuideState,
}

/// Runs for `duration_ms`, keeping beats that land at or after `record_from_ms`
/// (absolute subject time).
pub fn run_guided(
    params: &SubjectParams,
    subject: SubjectState,
    guide: GuideState,
    mode: Option<&GuideMode>,
    duration_ms: u64,
    record_from_ms: u64,
    rng: &mut ChaCha8Rng,
) -> GuidedRun {
    let end = subject.t_ms + duration_ms;
    let mut subject = subject;
    let mut guide = guide;
    let mut series = IbiSeries::new(SignalSource::Simulated);
    while subject.t_ms < end {
        let phase = mode.map(|m| {
            guide = step(guide, subject.t_ms.saturating_sub(guide.t_ms), m);
            guide.phase
        });
        let (sample, next) = next_ibi(params, subject, phase, false, rng);
        subject = next;
        guide = smooth_hr(guide, sample, DEFAULT_TAU_S);
        if sample.t_ms >= record_from_ms && sample.t_ms <= end {
            series.push(sample).expect("beats are strictly increasing");
        }
    }
    GuidedRun { series, subject, guide }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub rates_bpm: Vec<f64>,
    /// Time given to the subject to settle onto each rate before recording.
    pub settle_ms: u64,
    pub record_ms: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { rates_bpm: vec![4.5, 5.0, 5.5, 6.0, 6.5], settle_ms: 30_000, record_ms: 120_000 }
    }
}

/// Paces the subject at each candidate rate in turn and picks the one with
/// the largest RMSSD.
pub fn resonance_sweep(
    params: &SubjectParams,
    subject: SubjectState,
    config: &SweepConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(CalibrationResult, SubjectState)> {
    let mut subject = subject;
    let mut recordings = Vec::with_capacity(config.rates_bpm.len());
    for &rate in &config.rates_bpm {
        let mode = GuideMode::Static { rate_bpm: rate };
        let start = subject.t_ms;
        let run = run_guided(
            params,
            subject,
            GuideState::new(start),
            Some(&mode),
            config.settle_ms + config.record_ms,
            start + config.settle_ms,
            rng,
        );
        subject = run.subject;
        recordings.push(run.series);
    }
    Ok((calibrate_resonance(&config.rates_bpm, &recordings)?, subject))
}

/// Divider for a dynamic guide centred on `rate_bpm`, from a resting recording.
pub fn calibrated_mode(baseline: &IbiSeries, rate_bpm: f64) -> Result<GuideMode> {
    Ok(GuideMode::dynamic(delta_from_baseline(baseline, rate_bpm)?))
}

/// Mean heart rate of an unguided stretch, used as the calibration baseline.
pub fn baseline(params: &SubjectParams, subject: SubjectState, duration_ms: u64, rng: &mut ChaCha8Rng) -> Result<(IbiSeries, f64, SubjectState)> {
    let run = run_guided(params, subject, GuideState::new(subject.t_ms), None, duration_ms, subject.t_ms, rng);
    let hr = mean_hr(&run.series)?;
    Ok((run.series, hr, run.subject))
}
