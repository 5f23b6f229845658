//! Inter-beat interval (IBI) series and time-domain HRV.
//!
//! Everything downstream consumes a single physiological signal: the
//! timestamped interval between successive heartbeats. Timestamps are
//! session-relative milliseconds, intervals are milliseconds, and RMSSD is
//! reported in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative deviation accepted by [`artifact_filter`].
pub const DEFAULT_ARTIFACT_THRESHOLD: f64 = 0.2;

/// Number of previously accepted beats the artifact filter takes its median over.
const ARTIFACT_HISTORY: usize = 5;

/// One heartbeat: the interval that ended at `t_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbiSample {
    pub t_ms: u64,
    pub ibi_ms: f64,
}

impl IbiSample {
    pub fn new(t_ms: u64, ibi_ms: f64) -> Result<Self> {
        if !(ibi_ms.is_finite() && ibi_ms > 0.0) {
            return Err(Error::Domain(format!("ibi_ms must be positive, got {ibi_ms}")));
        }
        Ok(Self { t_ms, ibi_ms })
    }

    /// Instantaneous heart rate in beats per minute.
    pub fn hr_bpm(&self) -> f64 {
        60_000.0 / self.ibi_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    Live,
    Replay,
    Simulated,
}

/// An ordered IBI recording. Timestamps are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbiSeries {
    samples: Vec<IbiSample>,
    pub source: SignalSource,
}

impl IbiSeries {
    pub fn new(source: SignalSource) -> Self {
        Self { samples: Vec::new(), source }
    }

    /// Builds a series, checking the ordering and positivity invariants.
    pub fn from_samples(source: SignalSource, samples: Vec<IbiSample>) -> Result<Self> {
        let mut series = Self { samples: Vec::with_capacity(samples.len()), source };
        for s in samples {
            series.push(s)?;
        }
        Ok(series)
    }

    /// Builds a series from bare intervals, timestamping each beat at the
    /// cumulative sum of the intervals so far (rounded to the millisecond).
    pub fn from_intervals(source: SignalSource, intervals_ms: &[f64]) -> Result<Self> {
        let mut t = 0.0;
        let mut last: Option<u64> = None;
        let mut samples = Vec::with_capacity(intervals_ms.len());
        for &ibi in intervals_ms {
            t += ibi;
            let mut t_ms = t.round().max(0.0) as u64;
            if let Some(prev) = last {
                t_ms = t_ms.max(prev + 1);
            }
            last = Some(t_ms);
            samples.push(IbiSample::new(t_ms, ibi)?);
        }
        Self::from_samples(source, samples)
    }

    pub fn push(&mut self, sample: IbiSample) -> Result<()> {
        if !(sample.ibi_ms.is_finite() && sample.ibi_ms > 0.0) {
            return Err(Error::Domain(format!("ibi_ms must be positive, got {}", sample.ibi_ms)));
        }
        if let Some(last) = self.samples.last() {
            if sample.t_ms <= last.t_ms {
                return Err(Error::Validation(format!(
                    "timestamps must be strictly increasing ({} after {})",
                    sample.t_ms, last.t_ms
                )));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[IbiSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn intervals(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.ibi_ms)
    }

    /// Total recorded time covered by the intervals, in milliseconds.
    pub fn covered_ms(&self) -> f64 {
        self.intervals().sum()
    }

    /// Samples with `start_ms <= t_ms < end_ms`.
    pub fn window(&self, start_ms: u64, end_ms: u64) -> IbiSeries {
        let lo = self.samples.partition_point(|s| s.t_ms < start_ms);
        let hi = self.samples.partition_point(|s| s.t_ms < end_ms);
        IbiSeries { samples: self.samples[lo..hi.max(lo)].to_vec(), source: self.source }
    }
}

/// RMSSD of a series (or a window of one), in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmssdValue {
    pub value_s: f64,
    pub n_intervals: usize,
    pub window: Option<(u64, u64)>,
}

pub fn ibi_from_hr(hr_bpm: f64) -> Result<f64> {
    if !(hr_bpm.is_finite() && hr_bpm > 0.0) {
        return Err(Error::Domain(format!("heart rate must be positive, got {hr_bpm}")));
    }
    Ok(60_000.0 / hr_bpm)
}

/// Root mean square of successive interval differences, in seconds.
///
/// Differences are taken on the millisecond values and scaled afterwards,
/// so adding an integer offset to integer intervals leaves the result
/// bit-for-bit unchanged.
pub fn rmssd(series: &IbiSeries) -> Result<RmssdValue> {
    let value_s = rmssd_of(series.samples())?;
    Ok(RmssdValue { value_s, n_intervals: series.len() - 1, window: None })
}

fn rmssd_of(samples: &[IbiSample]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "RMSSD needs at least 2 intervals, got {}",
            samples.len()
        )));
    }
    let sum_sq: f64 = samples
        .windows(2)
        .map(|w| {
            let d = w[1].ibi_ms - w[0].ibi_ms;
            d * d
        })
        .sum();
    let mean_sq = sum_sq / (samples.len() - 1) as f64;
    Ok(mean_sq.sqrt() / 1000.0)
}

/// RMSSD over half-open windows `[start, start + window)` stepped from the
/// first sample's timestamp. Windows holding fewer than two beats are skipped.
pub fn sliding_rmssd(series: &IbiSeries, window_s: f64, step_s: f64) -> Result<Vec<RmssdValue>> {
    if !(window_s > 0.0 && step_s > 0.0) {
        return Err(Error::Domain("window and step must be positive".into()));
    }
    let (Some(first), Some(last)) = (series.samples.first(), series.samples.last()) else {
        return Ok(Vec::new());
    };
    let window_ms = (window_s * 1000.0).round() as u64;
    let step_ms = ((step_s * 1000.0).round() as u64).max(1);
    let mut out = Vec::new();
    let mut start = first.t_ms;
    while start <= last.t_ms {
        let end = start + window_ms;
        let lo = series.samples.partition_point(|s| s.t_ms < start);
        let hi = series.samples.partition_point(|s| s.t_ms < end);
        if hi >= lo + 2 {
            let value_s = rmssd_of(&series.samples[lo..hi])?;
            out.push(RmssdValue { value_s, n_intervals: hi - lo - 1, window: Some((start, end)) });
        }
        start += step_ms;
    }
    Ok(out)
}

/// Drops beats deviating from the median of the previous five accepted
/// beats by more than `rel_threshold` (relative to that median). The first
/// five beats are always kept.
pub fn artifact_filter(series: &IbiSeries, rel_threshold: f64) -> Result<IbiSeries> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::Domain(format!("threshold must lie in (0, 1), got {rel_threshold}")));
    }
    let mut kept: Vec<IbiSample> = Vec::with_capacity(series.len());
    for &s in series.samples() {
        if kept.len() < ARTIFACT_HISTORY {
            kept.push(s);
            continue;
        }
        let mut recent: [f64; ARTIFACT_HISTORY] = [0.0; ARTIFACT_HISTORY];
        for (slot, k) in recent.iter_mut().zip(&kept[kept.len() - ARTIFACT_HISTORY..]) {
            *slot = k.ibi_ms;
        }
        recent.sort_by(f64::total_cmp);
        let median = recent[ARTIFACT_HISTORY / 2];
        if (s.ibi_ms - median).abs() <= rel_threshold * median {
            kept.push(s);
        }
    }
    Ok(IbiSeries { samples: kept, source: series.source })
}

pub fn mean_hr(series: &IbiSeries) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InsufficientData("mean HR of an empty series".into()));
    }
    let mean_ibi = series.intervals().sum::<f64>() / series.len() as f64;
    Ok(60_000.0 / mean_ibi)
}
