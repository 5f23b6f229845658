//! Complete sessions with a simulated participant and no wall clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bloom_core::assess::StaiKey;
use bloom_core::closedloop::SweepConfig;
use bloom_core::cogtask::Key;
use bloom_core::guide::{calibrate_resonance, delta_from_baseline, CalibrationResult, DELTA_BOUNDS};
use bloom_core::protocol::{Attention, CalibrationEvent, Questionnaire, StageKind};
use bloom_core::stats::synthetic::{condition_of, participant_id};
use bloom_core::subjectsim::{next_ibi, respond_nback};
use bloom_core::{Condition, GuideMode, ResponseEvent, SessionLog, SubjectParams, SubjectState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ClientEvent, EngineConfig, SessionEngine, StreamEvent};
use crate::error::{GatewayError, Result};

/// How the simulated participant fills in questionnaires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseModel {
    /// Latent anxiety in `[0, 1]` at each of the three STAI administrations.
    pub stai_anxiety: [f64; 3],
    /// Lowers the last administration after a focused breathing exercise.
    pub focus_relief: f64,
    /// Per-item noise on the latent scale.
    pub item_sd: f64,
    /// Latent agreement in `[0, 1]` with the usability statements.
    pub use_agreement: f64,
}

impl Default for ResponseModel {
    fn default() -> Self {
        Self { stai_anxiety: [0.3, 0.5, 0.35], focus_relief: 0.15, item_sd: 0.15, use_agreement: 0.75 }
    }
}

impl ResponseModel {
    fn likert<R: Rng + ?Sized>(&self, level: f64, rng: &mut R) -> u8 {
        let noise = Normal::new(0.0, self.item_sd.max(0.0)).expect("finite sd");
        let x = (level + noise.sample(rng)).clamp(0.0, 1.0);
        (1.0 + 3.0 * x).round() as u8
    }

    pub fn stai_answers<R: Rng + ?Sized>(&self, level: f64, keys: &[StaiKey], rng: &mut R) -> Vec<u8> {
        keys.iter()
            .map(|k| {
                let v = self.likert(level, rng);
                match k {
                    StaiKey::AnxietyPresent => v,
                    StaiKey::AnxietyAbsent => 5 - v,
                }
            })
            .collect()
    }

    pub fn use_answers<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        (0..bloom_core::assess::USE_ITEMS).map(|_| self.likert(self.use_agreement, rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadlessConfig {
    pub engine: EngineConfig,
    pub setup_ms: u64,
    /// Time spent on a STAI form before submitting.
    pub stai_ms: u64,
    pub use_ms: u64,
    pub sweep: SweepConfig,
    pub responses: ResponseModel,
    /// Defaults to `sim-<seed>`.
    pub participant_id: Option<String>,
}

impl Default for HeadlessConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            setup_ms: 120_000,
            stai_ms: 45_000,
            use_ms: 90_000,
            sweep: SweepConfig { settle_ms: 20_000, record_ms: 60_000, ..SweepConfig::default() },
            responses: ResponseModel::default(),
            participant_id: None,
        }
    }
}

struct Driver<'a> {
    engine: SessionEngine,
    params: &'a SubjectParams,
    subject: SubjectState,
    focus: bool,
    beats: ChaCha8Rng,
    answers: ChaCha8Rng,
    /// Replies waiting for their time, keyed by (time, order).
    pending: BTreeMap<(u64, u64), ResponseEvent>,
    order: u64,
}

impl Driver<'_> {
    fn now(&self) -> u64 {
        self.subject.t_ms
    }

    fn collect(&mut self) {
        for msg in self.engine.drain() {
            if let StreamEvent::Stimulus(s) = msg {
                let target = self.engine.stimulus_key(s.seq_index, s.position) == Some(Key::Target);
                let reply = respond_nback(self.params, target, &mut self.answers);
                let latency = reply.latency_ms.round();
                self.order += 1;
                self.pending.insert(
                    (s.onset_ms + latency as u64, self.order),
                    ResponseEvent { seq_index: s.seq_index, position: s.position, button: reply.button, latency_ms: latency },
                );
            }
        }
    }

    fn follows_guide(&self) -> bool {
        match self.engine.log().active_stage() {
            Some((_, s)) => self.focus || s.kind == StageKind::Calibration,
            None => false,
        }
    }

    fn stressed(&self) -> bool {
        matches!(self.engine.log().active_stage(), Some((_, s)) if matches!(s.kind, StageKind::Nback { .. }))
    }

    /// Beats until `done` says stop. Due responses are delivered in time
    /// order between beats.
    fn run_while(&mut self, mut keep_going: impl FnMut(&SessionEngine, u64) -> bool) -> Result<()> {
        while keep_going(&self.engine, self.now()) {
            let t = self.now();
            self.engine.advance_to(t)?;
            self.collect();
            let phase = if self.follows_guide() { self.engine.guide_phase_at(t) } else { None };
            let (beat, next) = next_ibi(self.params, self.subject, phase, self.stressed(), &mut self.beats);
            // Step through stimuli and replies up to the beat so every reply
            // is delivered at its own time.
            loop {
                let reply = self.pending.first_key_value().map(|(&k, _)| k);
                let next = [reply.map(|k| k.0), self.engine.next_scheduled_ms()]
                    .into_iter()
                    .flatten()
                    .filter(|&x| x <= beat.t_ms)
                    .min();
                let Some(at) = next else { break };
                self.engine.advance_to(at)?;
                self.collect();
                if let Some(key @ (rt, _)) = reply {
                    if rt == at {
                        let r = self.pending.remove(&key).expect("key just seen");
                        if self.engine.log().active_stage().is_some() {
                            self.engine.submit(rt, ClientEvent::Response(r))?;
                        }
                        self.collect();
                    }
                }
            }
            self.engine.ingest_ibi(beat.t_ms, beat.ibi_ms)?;
            self.collect();
            self.subject = next;
        }
        Ok(())
    }

    fn run_for(&mut self, ms: u64) -> Result<()> {
        let end = self.now() + ms;
        self.run_while(|_, t| t < end)
    }

    fn run_stage_out(&mut self) -> Result<()> {
        self.run_while(|e, _| e.log().active_stage().is_some())
    }

    fn submit(&mut self, event: ClientEvent) -> Result<()> {
        let t = self.now();
        self.engine.submit(t, event)?;
        self.collect();
        Ok(())
    }

    fn calibrate(&mut self, sweep: &SweepConfig) -> Result<()> {
        let baseline = match self.engine.log().stage_window(0) {
            Some((start, end)) => self.engine.log().ibi_between(start, end),
            None => return Err(bloom_core::Error::InsufficientData("no setup recording for calibration".into()).into()),
        };
        let mut recordings = Vec::with_capacity(sweep.rates_bpm.len());
        for &rate in &sweep.rates_bpm {
            self.engine.set_guide_override(Some(GuideMode::Static { rate_bpm: rate }))?;
            let start = self.now() + sweep.settle_ms;
            self.run_for(sweep.settle_ms + sweep.record_ms)?;
            recordings.push(self.engine.log().ibi_between(start, self.now() + 1));
        }
        self.engine.set_guide_override(None)?;
        let result = calibrate_resonance(&sweep.rates_bpm, &recordings)?;
        let CalibrationResult::ResonanceSweep { rate_bpm, .. } = result else { unreachable!("sweep result") };
        self.submit(ClientEvent::CalibrationEvent(CalibrationEvent::Result(result)))?;
        let delta = delta_from_baseline(&baseline, rate_bpm)?.clamp(DELTA_BOUNDS.0, DELTA_BOUNDS.1);
        self.submit(ClientEvent::CalibrationEvent(CalibrationEvent::Result(CalibrationResult::Interactive {
            delta,
            adjustments: 0,
        })))
    }
}

/// Runs a full session with default settings.
pub fn run_headless(condition: Condition, subject: &SubjectParams, seed: u64) -> SessionLog {
    run_headless_with(condition, subject, seed, &HeadlessConfig::default()).expect("valid headless configuration")
}

/// Runs every stage of the plan with the simulated participant and returns
/// the completed log. The same inputs always give the same log.
pub fn run_headless_with(condition: Condition, subject: &SubjectParams, seed: u64, cfg: &HeadlessConfig) -> Result<SessionLog> {
    subject.validate()?;
    let id = cfg.participant_id.clone().unwrap_or_else(|| format!("sim-{seed}"));
    let plan = bloom_core::protocol::build_plan(&id, condition);
    let keys = plan.stai_keys;
    let engine = SessionEngine::new(plan, EngineConfig { seed, ..cfg.engine.clone() })?;
    let stream = |i: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(i);
        r
    };
    let mut d = Driver {
        engine,
        params: subject,
        subject: SubjectState::new(0),
        focus: condition.attention == Attention::Focus,
        beats: stream(1),
        answers: stream(2),
        pending: BTreeMap::new(),
        order: 0,
    };
    let mut forms = stream(3);

    while !d.engine.completed() {
        let t = d.now();
        let index = d.engine.advance_stage(t)?;
        d.collect();
        match d.engine.log().plan.stages[index].kind {
            StageKind::Setup => d.run_for(cfg.setup_ms)?,
            StageKind::Calibration => d.calibrate(&cfg.sweep)?,
            StageKind::Stai { index: k } => {
                d.run_for(cfg.stai_ms)?;
                let mut level = cfg.responses.stai_anxiety[usize::from(k.clamp(1, 3)) - 1];
                if k == 3 && d.focus {
                    level -= cfg.responses.focus_relief;
                }
                let answers = cfg.responses.stai_answers(level, &keys, &mut forms);
                d.submit(ClientEvent::QuestionnaireSubmitted { questionnaire: Questionnaire::Stai, answers })?;
            }
            StageKind::UseQuestionnaire => {
                d.run_for(cfg.use_ms)?;
                let answers = cfg.responses.use_answers(&mut forms);
                d.submit(ClientEvent::QuestionnaireSubmitted { questionnaire: Questionnaire::Use, answers })?;
            }
            StageKind::Nback { .. } | StageKind::BreathingExercise | StageKind::ReadingTask => d.run_stage_out()?,
        }
    }
    Ok(d.engine.into_log())
}

/// Draws a plausible participant around the default subject.
pub fn sample_subject(seed: u64) -> SubjectParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SubjectParams {
        ibi_base_ms: rng.random_range(750.0..950.0),
        a_max_ms: rng.random_range(40.0..80.0),
        f_res_hz: rng.random_range(0.08..0.10),
        noise_sd_ms: rng.random_range(5.0..8.0),
        nback_skill: rng.random_range(0.65..0.9),
        seed,
        ..SubjectParams::default()
    }
}

/// `per_condition` sessions in each of the four conditions, with
/// participants `S01`, `S02`, ... assigned to conditions in blocks.
pub fn simulate_study(per_condition: usize, seed: u64, cfg: &HeadlessConfig) -> Result<Vec<SessionLog>> {
    (0..4 * per_condition)
        .into_par_iter()
        .map(|i| {
            let session_seed = session_seed(seed, i);
            let subject = sample_subject(session_seed);
            let cfg = HeadlessConfig { participant_id: Some(participant_id(i)), ..cfg.clone() };
            run_headless_with(condition_of(i, per_condition), &subject, session_seed, &cfg)
        })
        .collect()
}

/// `n` sessions all in one condition, seeded as in [`simulate_study`].
pub fn simulate_condition(condition: Condition, n: usize, seed: u64, cfg: &HeadlessConfig) -> Result<Vec<SessionLog>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let session_seed = session_seed(seed, i);
            let cfg = HeadlessConfig { participant_id: Some(participant_id(i)), ..cfg.clone() };
            run_headless_with(condition, &sample_subject(session_seed), session_seed, &cfg)
        })
        .collect()
}

fn session_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Writes each log as `<participant>.jsonl` under `dir`.
pub fn write_logs(dir: &Path, logs: &[SessionLog]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| GatewayError::io(dir, e))?;
    logs.iter()
        .map(|log| {
            let path = dir.join(format!("{}.jsonl", log.plan.participant_id));
            std::fs::write(&path, log.to_jsonl()).map_err(|e| GatewayError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
