//! One session's live state: the protocol log, the guide and the N-back
//! schedule, driven by explicit timestamps.
//!
//! Nothing here reads a clock. The service feeds it wall-clock time and
//! headless runs feed it simulated time, so both produce the same log for
//! the same inputs.

use std::collections::HashSet;

use bloom_core::cogtask::{generate_plan, is_correct, Key};
use bloom_core::guide::{phase_to_frame, smooth_hr, step, Direction, DEFAULT_DELTA, DEFAULT_LEDS_PER_PETAL, DEFAULT_TAU_S};
use bloom_core::protocol::{CalibrationEvent, Feedback, Questionnaire, StageKind};
use bloom_core::{
    Error, EventKind, GuideMode, GuideState, IbiSample, NBackConfig, ResponseEvent, Result, SessionEvent, SessionLog,
    SessionPlan, StimulusPlan,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub frame_rate_hz: f64,
    pub frame_log_interval_ms: u64,
    pub leds_per_petal: usize,
    /// Pause before each N-back sequence.
    pub sequence_gap_ms: u64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 20.0,
            frame_log_interval_ms: 1000,
            leds_per_petal: DEFAULT_LEDS_PER_PETAL,
            sequence_gap_ms: 5000,
            seed: 0,
        }
    }
}

/// Messages pushed to stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum StreamEvent {
    GuideFrame(FrameMsg),
    Stimulus(StimulusMsg),
    Stage(StageMsg),
    Feedback(FeedbackMsg),
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::GuideFrame(_) => "guide_frame",
            StreamEvent::Stimulus(_) => "stimulus",
            StreamEvent::Stage(_) => "stage",
            StreamEvent::Feedback(_) => "feedback",
        }
    }

    /// The payload alone, as sent in a stream event's data field.
    pub fn data_json(&self) -> String {
        match self {
            StreamEvent::GuideFrame(m) => serde_json::to_string(m),
            StreamEvent::Stimulus(m) => serde_json::to_string(m),
            StreamEvent::Stage(m) => serde_json::to_string(m),
            StreamEvent::Feedback(m) => serde_json::to_string(m),
        }
        .expect("stream payloads serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMsg {
    pub t_ms: u64,
    pub phase: f64,
    pub br_bpm: f64,
    pub direction: Direction,
    pub intensities: Vec<f64>,
    pub hr_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusMsg {
    pub stage: usize,
    pub seq_index: usize,
    pub position: usize,
    pub letter: char,
    pub onset_ms: u64,
    pub display_ms: u64,
    pub training: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Started,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMsg {
    pub index: usize,
    pub kind: StageKind,
    pub status: StageStatus,
    pub t_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMsg {
    pub seq_index: usize,
    pub position: usize,
    pub correct: bool,
}

/// Events a participant's client may post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ClientEvent {
    Response(ResponseEvent),
    QuestionnaireSubmitted { questionnaire: Questionnaire, answers: Vec<u8> },
    CalibrationEvent(CalibrationEvent),
}

impl From<ClientEvent> for EventKind {
    fn from(e: ClientEvent) -> Self {
        match e {
            ClientEvent::Response(r) => EventKind::Response(r),
            ClientEvent::QuestionnaireSubmitted { questionnaire, answers } => {
                EventKind::QuestionnaireSubmitted { questionnaire, answers }
            }
            ClientEvent::CalibrationEvent(c) => EventKind::CalibrationEvent(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageView {
    pub index: usize,
    pub kind: StageKind,
    pub active: bool,
    pub started_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub plan: SessionPlan,
    pub current_stage: Option<StageView>,
    pub next_stage: Option<usize>,
    pub completed: bool,
    pub now_ms: u64,
    pub guide: Option<GuideMode>,
    pub calibrated_delta: Option<f64>,
}

#[derive(Debug, Clone)]
struct TaskRun {
    stage: usize,
    plan: StimulusPlan,
    config: NBackConfig,
    start_ms: u64,
    next: usize,
    answered: HashSet<(usize, usize)>,
}

impl TaskRun {
    fn total(&self) -> usize {
        self.plan.sequences.len() * self.config.letters_per_seq
    }

    fn onset(&self, flat: usize, gap_ms: u64) -> u64 {
        let (seq, pos) = (flat / self.config.letters_per_seq, flat % self.config.letters_per_seq);
        self.start_ms + (seq as u64 + 1) * gap_ms + seq as u64 * self.config.sequence_duration_ms() + self.config.onset_ms(pos)
    }

    /// The last answer window closes one onset interval after the last stimulus.
    fn end(&self, gap_ms: u64) -> u64 {
        self.onset(self.total() - 1, gap_ms) + self.config.onset_interval_ms
    }
}

pub struct SessionEngine {
    log: SessionLog,
    cfg: EngineConfig,
    now_ms: u64,
    guide: GuideState,
    guide_on: bool,
    override_mode: Option<GuideMode>,
    frames: u64,
    last_logged_frame: Option<u64>,
    stage_started_ms: u64,
    task: Option<TaskRun>,
    outbox: Vec<StreamEvent>,
}

impl SessionEngine {
    pub fn new(plan: SessionPlan, cfg: EngineConfig) -> Result<Self> {
        if !(cfg.frame_rate_hz.is_finite() && cfg.frame_rate_hz > 0.0) {
            return Err(Error::Domain(format!("frame rate must be positive, got {}", cfg.frame_rate_hz)));
        }
        plan.nback.validate()?;
        Ok(Self {
            log: SessionLog::new(plan),
            cfg,
            now_ms: 0,
            guide: GuideState::new(0),
            guide_on: false,
            override_mode: None,
            frames: 0,
            last_logged_frame: None,
            stage_started_ms: 0,
            task: None,
            outbox: Vec::new(),
        })
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn completed(&self) -> bool {
        self.log.completed()
    }

    /// Stream messages produced since the last call.
    pub fn drain(&mut self) -> Vec<StreamEvent> {
        std::mem::take(&mut self.outbox)
    }

    pub fn guide_state(&self) -> GuideState {
        self.guide
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            plan: self.log.plan.clone(),
            current_stage: self.log.current_stage().map(|(index, s, active)| StageView {
                index,
                kind: s.kind,
                active,
                started_ms: self.stage_started_ms,
            }),
            next_stage: self.log.next_stage_index(),
            completed: self.log.completed(),
            now_ms: self.now_ms,
            guide: self.mode(),
            calibrated_delta: self.log.calibrated_delta(),
        }
    }

    /// Forces the guide mode while calibration runs. Cleared with `None`.
    pub fn set_guide_override(&mut self, mode: Option<GuideMode>) -> Result<()> {
        if let Some(m) = &mode {
            m.validate()?;
            match self.log.active_stage() {
                Some((_, s)) if s.kind == StageKind::Calibration => {}
                _ => return Err(Error::ProtocolViolation("guide override outside calibration".into())),
            }
        }
        self.override_mode = mode;
        Ok(())
    }

    /// The guide mode in force right now, if the guide is running.
    pub fn mode(&self) -> Option<GuideMode> {
        let (_, stage) = self.log.active_stage()?;
        if stage.kind == StageKind::Calibration {
            if let Some(m) = self.override_mode {
                return Some(m);
            }
        }
        if !stage.guide_active() {
            return None;
        }
        if stage.kind == StageKind::Calibration {
            return Some(GuideMode::dynamic(self.log.calibration_delta()));
        }
        Some(match self.log.plan.condition.feedback {
            Feedback::Static => GuideMode::static_default(),
            Feedback::Dynamic => GuideMode::dynamic(self.log.calibrated_delta().unwrap_or(DEFAULT_DELTA)),
        })
    }

    /// Guide phase at `t_ms`, extrapolated from the last frame.
    pub fn guide_phase_at(&self, t_ms: u64) -> Option<f64> {
        let mode = self.mode()?;
        if !self.guide_on {
            return Some(self.guide.phase);
        }
        Some(step(self.guide, t_ms.saturating_sub(self.guide.t_ms), &mode).phase)
    }

    /// Whether an N-back stimulus for `(seq_index, position)` is a target.
    pub fn stimulus_key(&self, seq_index: usize, position: usize) -> Option<Key> {
        let task = self.task.as_ref()?;
        task.plan.sequences.get(seq_index)?.key.get(position).copied()
    }

    fn frame_time(&self, k: u64) -> u64 {
        (k as f64 * 1000.0 / self.cfg.frame_rate_hz).round() as u64
    }

    fn timed_end(&self) -> Option<u64> {
        let (_, s) = self.log.active_stage()?;
        s.planned_duration_ms().map(|d| self.stage_started_ms + d)
    }

    /// Time of the next stimulus, task end or timed stage end, ignoring frames.
    pub fn next_scheduled_ms(&self) -> Option<u64> {
        let gap = self.cfg.sequence_gap_ms;
        let task = self.task.as_ref().map(|t| if t.next < t.total() { t.onset(t.next, gap) } else { t.end(gap) });
        match (task, self.timed_end()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Runs frames, stimuli and timed stage ends due up to `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) -> Result<()> {
        if t_ms < self.now_ms {
            return Err(Error::ProtocolViolation(format!("time went backwards: {t_ms} < {}", self.now_ms)));
        }
        let gap = self.cfg.sequence_gap_ms;
        loop {
            let stage_end = self.timed_end().unwrap_or(u64::MAX);
            let (stim, task_end) = match &self.task {
                Some(task) if task.next < task.total() => (task.onset(task.next, gap), u64::MAX),
                Some(task) => (u64::MAX, task.end(gap)),
                None => (u64::MAX, u64::MAX),
            };
            let frame = self.frame_time(self.frames);
            let due = stage_end.min(stim).min(task_end).min(frame);
            if due > t_ms {
                break;
            }
            if due == stage_end {
                self.log.tick(stage_end)?;
                self.after_stage_change(stage_end, true);
            } else if due == task_end {
                let stage = self.log.complete_current_stage(task_end)?;
                self.task = None;
                self.push_stage(stage, StageStatus::Completed, task_end);
            } else if due == stim {
                self.show_stimulus(stim)?;
            } else {
                self.frames += 1;
                self.frame(frame)?;
            }
        }
        self.now_ms = t_ms;
        Ok(())
    }

    fn show_stimulus(&mut self, t: u64) -> Result<()> {
        let task = self.task.as_mut().expect("stimulus scheduled without a task");
        let flat = task.next;
        task.next += 1;
        let l = task.config.letters_per_seq;
        let (seq_index, position) = (flat / l, flat % l);
        let letter = task.plan.sequences[seq_index].letters[position];
        let msg = StimulusMsg {
            stage: task.stage,
            seq_index,
            position,
            letter,
            onset_ms: t,
            display_ms: task.config.display_ms,
            training: task.plan.sequences[seq_index].training,
        };
        self.log.advance(SessionEvent::new(t, EventKind::StimulusShown { seq_index, position, letter }))?;
        self.outbox.push(StreamEvent::Stimulus(msg));
        Ok(())
    }

    fn frame(&mut self, t: u64) -> Result<()> {
        let Some(mode) = self.mode() else {
            self.guide_on = false;
            return Ok(());
        };
        if !self.guide_on {
            // Resume where the guide stopped instead of jumping ahead.
            self.guide.t_ms = t;
            self.guide_on = true;
        }
        self.guide = step(self.guide, t - self.guide.t_ms, &mode);
        let frame = phase_to_frame(self.guide.phase, self.cfg.leds_per_petal)?;
        if self.last_logged_frame.is_none_or(|last| t >= last + self.cfg.frame_log_interval_ms) {
            self.last_logged_frame = Some(t);
            self.log.advance(SessionEvent::new(
                t,
                EventKind::GuideFrameEmitted { phase: self.guide.phase, br_bpm: self.guide.br_bpm, direction: frame.direction },
            ))?;
        }
        self.outbox.push(StreamEvent::GuideFrame(FrameMsg {
            t_ms: t,
            phase: frame.phase,
            br_bpm: self.guide.br_bpm,
            direction: frame.direction,
            intensities: frame.intensities,
            hr_bpm: self.guide.smoothed_hr_bpm,
        }));
        Ok(())
    }

    fn push_stage(&mut self, index: usize, status: StageStatus, t_ms: u64) {
        let kind = self.log.plan.stages[index].kind;
        self.outbox.push(StreamEvent::Stage(StageMsg { index, kind, status, t_ms }));
    }

    /// Emits a completion message if the stage running before an event has
    /// stopped.
    fn after_stage_change(&mut self, t: u64, was_active: bool) {
        if was_active && self.log.active_stage().is_none() {
            if let Some((i, _, _)) = self.log.current_stage() {
                self.task = None;
                self.override_mode = None;
                self.push_stage(i, StageStatus::Completed, t);
            }
        }
    }

    pub fn ingest_ibi(&mut self, t_ms: u64, ibi_ms: f64) -> Result<()> {
        self.advance_to(t_ms)?;
        self.log.advance(SessionEvent::ibi(IbiSample { t_ms, ibi_ms }))?;
        self.guide = smooth_hr(self.guide, IbiSample { t_ms, ibi_ms }, DEFAULT_TAU_S);
        Ok(())
    }

    /// Records a participant event. Responses produce feedback for the first
    /// answer to each stimulus.
    pub fn submit(&mut self, t_ms: u64, event: ClientEvent) -> Result<()> {
        self.advance_to(t_ms)?;
        let was_active = self.log.active_stage().is_some();
        let response = match &event {
            ClientEvent::Response(r) => Some(*r),
            _ => None,
        };
        self.log.advance(SessionEvent::new(t_ms, event.into()))?;
        if let Some(r) = response {
            let key = self.stimulus_key(r.seq_index, r.position);
            let task = self.task.as_mut().expect("responses are only accepted during a task");
            if task.answered.insert((r.seq_index, r.position)) {
                if let Some(correct) = key.and_then(|k| is_correct(k, r.button)) {
                    self.outbox.push(StreamEvent::Feedback(FeedbackMsg {
                        seq_index: r.seq_index,
                        position: r.position,
                        correct,
                    }));
                }
            }
        }
        self.after_stage_change(t_ms, was_active);
        Ok(())
    }

    /// Experimenter control: ends an open-ended stage if one is running and
    /// starts the next. Timed stages, questionnaires and calibration end on
    /// their own.
    pub fn advance_stage(&mut self, t_ms: u64) -> Result<usize> {
        self.advance_to(t_ms)?;
        if let Some((i, s)) = self.log.active_stage() {
            let blocked = match s.kind {
                _ if s.planned_duration_s.is_some() => Some("runs for its planned duration"),
                StageKind::Stai { .. } | StageKind::UseQuestionnaire => Some("waits for the questionnaire"),
                StageKind::Calibration => Some("waits for the participant to accept"),
                _ => None,
            };
            if let Some(why) = blocked {
                return Err(Error::ProtocolViolation(format!("{} {why}", s.kind.label())));
            }
            self.log.complete_current_stage(t_ms)?;
            self.task = None;
            self.push_stage(i, StageStatus::Completed, t_ms);
        }
        let index = self.log.start_next_stage(t_ms)?;
        self.stage_started_ms = t_ms;
        self.override_mode = None;
        if let StageKind::Nback { index: task_index, training } = self.log.plan.stages[index].kind {
            let mut config = NBackConfig {
                seed: self.cfg.seed ^ (u64::from(task_index)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..self.log.plan.nback.clone()
            };
            if training {
                config = config.with_training();
            }
            let plan = generate_plan(&config)?;
            self.task = Some(TaskRun { stage: index, plan, config, start_ms: t_ms, next: 0, answered: HashSet::new() });
        }
        if self.mode().is_some() && !self.guide_on {
            self.guide.t_ms = t_ms;
            self.guide_on = true;
        }
        self.push_stage(index, StageStatus::Started, t_ms);
        Ok(index)
    }

    /// Adds a free-text note to the log.
    pub fn note(&mut self, t_ms: u64, text: impl Into<String>) -> Result<()> {
        self.advance_to(t_ms)?;
        self.log.advance(SessionEvent::new(t_ms, EventKind::Note { text: text.into() }))
    }
}
