//! A synthetic participant with respiratory sinus arrhythmia.
//!
//! The subject breathes either at a spontaneous rate or by following a
//! breathing guide through a first-order lag on the (unwrapped) guide phase.
//! Heart rate rises during inhale and falls during exhale; the depth of that
//! oscillation follows a Lorentzian resonance curve centred on the subject's
//! own resonance frequency.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::biosignal::IbiSample;
use crate::cogtask::Button;
use crate::error::{Error, Result};

/// Spontaneous breathing frequency when no guide is followed (15/min).
pub const SPONTANEOUS_BREATH_HZ: f64 = 0.25;
/// Beats are never scheduled closer than this.
const MIN_IBI_MS: f64 = 250.0;
const LATENCY_RANGE_MS: (f64, f64) = (300.0, 1500.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectParams {
    pub ibi_base_ms: f64,
    pub a_max_ms: f64,
    pub f_res_hz: f64,
    pub width_hz: f64,
    pub noise_sd_ms: f64,
    pub compliance_lag_s: f64,
    pub stress_hr_gain_bpm: f64,
    /// Multiplier on the RSA amplitude while stressed, in `(0, 1]`.
    pub stress_hrv_atten: f64,
    pub nback_skill: f64,
    pub seed: u64,
}

impl Default for SubjectParams {
    fn default() -> Self {
        Self {
            ibi_base_ms: 850.0,
            a_max_ms: 60.0,
            f_res_hz: 0.09,
            width_hz: 0.015,
            noise_sd_ms: 8.0,
            compliance_lag_s: 2.0,
            stress_hr_gain_bpm: 6.0,
            stress_hrv_atten: 0.6,
            nback_skill: 0.75,
            seed: 0,
        }
    }
}

impl SubjectParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if !(self.ibi_base_ms > 0.0) {
            return bad("ibi_base_ms must be positive");
        }
        if !(self.a_max_ms >= 0.0) {
            return bad("a_max_ms must be non-negative");
        }
        if !(0.05..=0.12).contains(&self.f_res_hz) {
            return bad("f_res_hz must lie in the 0.05-0.12 Hz coherence band");
        }
        if !(self.width_hz > 0.0) {
            return bad("width_hz must be positive");
        }
        if !(self.noise_sd_ms >= 0.0) {
            return bad("noise_sd_ms must be non-negative");
        }
        if !(self.compliance_lag_s >= 0.0) {
            return bad("compliance_lag_s must be non-negative");
        }
        if !(self.stress_hrv_atten > 0.0 && self.stress_hrv_atten <= 1.0) {
            return bad("stress_hrv_atten must lie in (0, 1]");
        }
        if !(self.nback_skill >= 0.0 && self.nback_skill <= 1.0) {
            return bad("nback_skill must lie in [0, 1]");
        }
        Ok(())
    }

    /// Resonance frequency expressed as breaths per minute.
    pub fn resonance_bpm(&self) -> f64 {
        self.f_res_hz * 60.0
    }
}

/// Generator state. `followed_cycles` is the unwrapped breathing phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectState {
    pub t_ms: u64,
    pub breath_phase_followed: f64,
    pub stressed: bool,
    followed_cycles: f64,
    target_cycles: f64,
    last_guide_phase: Option<f64>,
    last_guide_t_ms: u64,
    guide_cycles: f64,
    guide_rate_hz: f64,
    followed_freq_hz: f64,
}

impl SubjectState {
    pub fn new(t_ms: u64) -> Self {
        Self {
            t_ms,
            breath_phase_followed: 0.0,
            stressed: false,
            followed_cycles: 0.0,
            target_cycles: 0.0,
            last_guide_phase: None,
            last_guide_t_ms: t_ms,
            guide_cycles: 0.0,
            guide_rate_hz: SPONTANEOUS_BREATH_HZ,
            followed_freq_hz: SPONTANEOUS_BREATH_HZ,
        }
    }

    /// Breathing frequency over the most recent beat.
    pub fn followed_freq_hz(&self) -> f64 {
        self.followed_freq_hz
    }
}

impl Default for SubjectState {
    fn default() -> Self {
        Self::new(0)
    }
}

/// RSA amplitude (ms) when breathing at `f_breath_hz`.
pub fn amplitude(params: &SubjectParams, f_breath_hz: f64) -> f64 {
    let x = (f_breath_hz - params.f_res_hz) / params.width_hz;
    params.a_max_ms / (1.0 + x * x)
}

/// Closed-form RMSSD (seconds) of an IBI train `base - A sin(2 pi f t)`
/// sampled once per beat at spacing `base`.
pub fn sinusoid_rmssd_s(amplitude_ms: f64, f_hz: f64, base_ms: f64) -> f64 {
    std::f64::consts::SQRT_2 * amplitude_ms * (std::f64::consts::PI * f_hz * base_ms / 1000.0).sin().abs() / 1000.0
}

/// Produces the next heartbeat.
///
/// The subject's breathing is brought up to the current time first: the
/// target phase advances with the guide (unwrapped across the `1 -> 0`
/// boundary) or at the spontaneous rate, and the followed phase lags it
/// with time constant `compliance_lag_s`. The emitted interval is read off
/// the followed phase and the beat is scheduled one interval later.
pub fn next_ibi(
    params: &SubjectParams,
    state: SubjectState,
    guide_phase: Option<f64>,
    stressed: bool,
    rng: &mut ChaCha8Rng,
) -> (IbiSample, SubjectState) {
    let mut st = state;
    st.stressed = stressed;

    let base_hr = 60_000.0 / params.ibi_base_ms;
    let base_ibi = if stressed { 60_000.0 / (base_hr + params.stress_hr_gain_bpm) } else { params.ibi_base_ms };
    let atten = if stressed { params.stress_hrv_atten } else { 1.0 };
    let amp = amplitude(params, st.followed_freq_hz) * atten;

    let noise = if params.noise_sd_ms > 0.0 {
        Normal::new(0.0, params.noise_sd_ms).expect("valid sd").sample(rng)
    } else {
        0.0
    };
    let ibi = (base_ibi - amp * (TAU * st.breath_phase_followed).sin() + noise).max(MIN_IBI_MS);
    let dt_ms = ibi.round().max(1.0) as u64;
    let t_next = st.t_ms + dt_ms;

    // Breathing over the coming interval. The guide position is known at
    // the current beat; its rate is estimated from the previous beat.
    let dt_s = dt_ms as f64 / 1000.0;
    let (target_start, target_end) = match (guide_phase, st.last_guide_phase) {
        (Some(g), Some(prev)) => {
            // A beat is far shorter than half a breath, so the smallest
            // forward move is the right one.
            let mut d = g - prev;
            if d < -0.5 {
                d += 1.0;
            } else if d > 0.5 {
                d -= 1.0;
            }
            let d = d.max(0.0);
            let since_s = st.t_ms.saturating_sub(st.last_guide_t_ms) as f64 / 1000.0;
            if since_s > 0.0 {
                st.guide_rate_hz = d / since_s;
            }
            st.guide_cycles += d;
            (st.guide_cycles, st.guide_cycles + st.guide_rate_hz * dt_s)
        }
        (Some(g), None) => {
            // Latch onto the guide at its current phase, keeping the
            // subject's own cycle count.
            let mut anchored = st.followed_cycles.floor() + g;
            if anchored < st.followed_cycles - 0.5 {
                anchored += 1.0;
            }
            st.guide_cycles = anchored;
            st.guide_rate_hz = st.followed_freq_hz;
            (anchored, anchored + st.guide_rate_hz * dt_s)
        }
        (None, _) => (st.target_cycles, st.target_cycles + SPONTANEOUS_BREATH_HZ * dt_s),
    };
    if guide_phase.is_some() {
        st.last_guide_t_ms = st.t_ms;
    }
    let followed_start = st.followed_cycles;
    let followed_end = lag_ramp(followed_start, target_start, target_end, dt_s, params.compliance_lag_s);

    st.followed_freq_hz = ((followed_end - followed_start) / dt_s).max(0.0);
    st.followed_cycles = followed_end;
    st.target_cycles = target_end;
    st.breath_phase_followed = followed_end.rem_euclid(1.0);
    if st.breath_phase_followed >= 1.0 {
        st.breath_phase_followed = 0.0;
    }
    st.last_guide_phase = guide_phase;
    st.t_ms = t_next;

    (IbiSample { t_ms: t_next, ibi_ms: ibi }, st)
}

/// Exact first-order lag response over `dt` to a target moving linearly
/// from `g0` to `g1`.
fn lag_ramp(x0: f64, g0: f64, g1: f64, dt: f64, tau: f64) -> f64 {
    if tau <= 0.0 || dt <= 0.0 {
        return g1;
    }
    let v = (g1 - g0) / dt;
    let decay = (-dt / tau).exp();
    g1 - v * tau + (x0 - g0 + v * tau) * decay
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NBackReply {
    pub button: Button,
    pub latency_ms: f64,
}

/// A simulated N-back answer: correct with probability `nback_skill`.
/// Left means "same as N back", right means "different".
pub fn respond_nback<R: Rng + ?Sized>(params: &SubjectParams, stimulus_is_target: bool, rng: &mut R) -> NBackReply {
    let correct = rng.random_bool(params.nback_skill.clamp(0.0, 1.0));
    let says_target = stimulus_is_target == correct;
    let button = if says_target { Button::Left } else { Button::Right };
    let latency_ms = rng.random_range(LATENCY_RANGE_MS.0..=LATENCY_RANGE_MS.1);
    NBackReply { button, latency_ms }
}

/// Runs the subject without a guide for `duration_ms`, returning the beats.
pub fn free_run(
    params: &SubjectParams,
    state: SubjectState,
    duration_ms: u64,
    stressed: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<IbiSample>, SubjectState) {
    let end = state.t_ms + duration_ms;
    let mut st = state;
    let mut out = Vec::new();
    while st.t_ms < end {
        let (s, next) = next_ibi(params, st, None, stressed, rng);
        st = next;
        out.push(s);
    }
    (out, st)
}
