//! Session orchestration for the 2x2 study design.
//!
//! A [`SessionPlan`] is the ordered list of stages a participant goes
//! through; a [`SessionLog`] is the append-only record of what happened.
//! Every event is checked against the current stage before it is appended.
//! Logs persist as line-delimited JSON: a plan header followed by one event
//! per line, each carrying the schema version `"v":1`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assess::{self, StaiKey, StaiShortResponse, UseResponse, DEFAULT_STAI_KEYS, STAI_ITEMS, USE_ITEMS};
use crate::biosignal::{artifact_filter, rmssd, IbiSample, IbiSeries, SignalSource, DEFAULT_ARTIFACT_THRESHOLD};
use crate::cogtask::{self, NBackConfig, ResponseEvent, StimulusPlan};
use crate::error::{Error, Result};
use crate::guide::{calibrate_interactive, CalibrationRequest, CalibrationResult, Direction, DEFAULT_DELTA, DELTA_BOUNDS};

pub const SCHEMA_VERSION: u8 = 1;
/// Length of the breathing exercise and of the reading task.
pub const INTERVENTION_S: u32 = 360;
pub const DEFAULT_READING: &str = include_str!("../data/reading.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    Ambient,
    Focus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub attention: Attention,
    pub feedback: Feedback,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition { attention: Attention::Ambient, feedback: Feedback::Dynamic },
        Condition { attention: Attention::Ambient, feedback: Feedback::Static },
        Condition { attention: Attention::Focus, feedback: Feedback::Dynamic },
        Condition { attention: Attention::Focus, feedback: Feedback::Static },
    ];

    pub fn new(attention: Attention, feedback: Feedback) -> Self {
        Self { attention, feedback }
    }
}

impl fmt::Display for Attention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attention::Ambient => "ambient",
            Attention::Focus => "focus",
        })
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feedback::Dynamic => "dynamic",
            Feedback::Static => "static",
        })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.attention, self.feedback)
    }
}

impl FromStr for Attention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ambient" => Ok(Attention::Ambient),
            "focus" => Ok(Attention::Focus),
            other => Err(Error::Validation(format!("unknown attention level '{other}'"))),
        }
    }
}

impl FromStr for Feedback {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dynamic" => Ok(Feedback::Dynamic),
            "static" => Ok(Feedback::Static),
            other => Err(Error::Validation(format!("unknown feedback level '{other}'"))),
        }
    }
}

/// Parses `focus-dynamic`, `ambient_static` and similar.
impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, f) = s
            .split_once(['-', '_', '/'])
            .ok_or_else(|| Error::Validation(format!("condition '{s}' is not <attention>-<feedback>")))?;
        Ok(Condition { attention: a.parse()?, feedback: f.parse()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageKind {
    Setup,
    Calibration,
    Stai { index: u8 },
    Nback { index: u8, training: bool },
    BreathingExercise,
    ReadingTask,
    UseQuestionnaire,
}

impl StageKind {
    pub fn label(&self) -> String {
        match self {
            StageKind::Setup => "setup".into(),
            StageKind::Calibration => "calibration".into(),
            StageKind::Stai { index } => format!("stai{index}"),
            StageKind::Nback { index, .. } => format!("nback{index}"),
            StageKind::BreathingExercise => "breathing_exercise".into(),
            StageKind::ReadingTask => "reading_task".into(),
            StageKind::UseQuestionnaire => "use_questionnaire".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceState {
    Off,
    AmbientOn,
    FocusOn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub kind: StageKind,
    pub planned_duration_s: Option<u32>,
    pub device_state: DeviceState,
}

impl Stage {
    pub fn planned_duration_ms(&self) -> Option<u64> {
        self.planned_duration_s.map(|s| s as u64 * 1000)
    }

    /// Whether the breathing guide runs during this stage. Calibration runs
    /// the guide as a preview even though the device is otherwise off.
    pub fn guide_active(&self) -> bool {
        self.device_state != DeviceState::Off || self.kind == StageKind::Calibration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingMaterial {
    pub title: String,
    pub text: String,
}

impl Default for ReadingMaterial {
    fn default() -> Self {
        let title = DEFAULT_READING.lines().next().unwrap_or_default().trim().to_string();
        Self { title, text: DEFAULT_READING.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub participant_id: String,
    pub condition: Condition,
    pub stages: Vec<Stage>,
    pub nback: NBackConfig,
    pub stai_keys: [StaiKey; STAI_ITEMS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reading: Option<ReadingMaterial>,
    /// Opaque participant metadata (age, gender, ...). Nothing reads it.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SessionPlan {
    pub fn stage_index(&self, kind: StageKind) -> Option<usize> {
        self.stages.iter().position(|s| s.kind == kind)
    }

    /// Index of the stage supplying HRV at `time` (1..=3).
    pub fn hrv_stage(&self, time: u8) -> Option<usize> {
        match time {
            1 => self.stages.iter().position(|s| matches!(s.kind, StageKind::Nback { index: 1, .. })),
            2 => self
                .stages
                .iter()
                .position(|s| matches!(s.kind, StageKind::BreathingExercise | StageKind::ReadingTask)),
            3 => self.stages.iter().position(|s| matches!(s.kind, StageKind::Nback { index: 2, .. })),
            _ => None,
        }
    }
}

pub fn build_plan(participant_id: &str, condition: Condition) -> SessionPlan {
    let focus = condition.attention == Attention::Focus;
    let idle = if focus { DeviceState::Off } else { DeviceState::AmbientOn };
    let stage = |kind, planned_duration_s, device_state| Stage { kind, planned_duration_s, device_state };

    let mut stages = vec![stage(StageKind::Setup, None, idle)];
    if condition == Condition::new(Attention::Focus, Feedback::Dynamic) {
        stages.push(stage(StageKind::Calibration, None, idle));
    }
    stages.push(stage(StageKind::Stai { index: 1 }, None, idle));
    stages.push(stage(StageKind::Nback { index: 1, training: true }, None, idle));
    stages.push(stage(StageKind::Stai { index: 2 }, None, idle));
    if focus {
        stages.push(stage(StageKind::BreathingExercise, Some(INTERVENTION_S), DeviceState::FocusOn));
    } else {
        stages.push(stage(StageKind::ReadingTask, Some(INTERVENTION_S), idle));
    }
    stages.push(stage(StageKind::Nback { index: 2, training: false }, None, idle));
    stages.push(stage(StageKind::Stai { index: 3 }, None, idle));
    if focus {
        stages.push(stage(StageKind::UseQuestionnaire, None, idle));
    }

    SessionPlan {
        participant_id: participant_id.to_string(),
        condition,
        stages,
        nback: NBackConfig::default(),
        stai_keys: DEFAULT_STAI_KEYS,
        reading: (!focus).then(ReadingMaterial::default),
        metadata: BTreeMap::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Questionnaire {
    Stai,
    Use,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CalibrationEvent {
    Request { request: CalibrationRequest },
    Result(CalibrationResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    StageStarted { stage: usize, kind: StageKind },
    StageCompleted { stage: usize },
    IbiSample { ibi_ms: f64 },
    GuideFrameEmitted { phase: f64, br_bpm: f64, direction: Direction },
    StimulusShown { seq_index: usize, position: usize, letter: char },
    Response(ResponseEvent),
    QuestionnaireSubmitted { questionnaire: Questionnaire, answers: Vec<u8> },
    CalibrationEvent(CalibrationEvent),
    Note { text: String },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::StageStarted { .. } => "stage_started",
            EventKind::StageCompleted { .. } => "stage_completed",
            EventKind::IbiSample { .. } => "ibi_sample",
            EventKind::GuideFrameEmitted { .. } => "guide_frame_emitted",
            EventKind::StimulusShown { .. } => "stimulus_shown",
            EventKind::Response(_) => "response",
            EventKind::QuestionnaireSubmitted { .. } => "questionnaire_submitted",
            EventKind::CalibrationEvent(_) => "calibration_event",
            EventKind::Note { .. } => "note",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub t_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SessionEvent {
    pub fn new(t_ms: u64, kind: EventKind) -> Self {
        Self { t_ms, kind }
    }

    pub fn ibi(sample: IbiSample) -> Self {
        Self { t_ms: sample.t_ms, kind: EventKind::IbiSample { ibi_ms: sample.ibi_ms } }
    }
}

#[derive(Serialize, Deserialize)]
struct EventLine<'a> {
    v: u8,
    #[serde(flatten)]
    event: std::borrow::Cow<'a, SessionEvent>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename = "plan")]
struct HeaderLine<'a> {
    v: u8,
    plan: std::borrow::Cow<'a, SessionPlan>,
}

/// Where the log currently stands.
#[derive(Debug, Clone, Default, PartialEq)]
struct Cursor {
    /// Index of the last stage started.
    stage: Option<usize>,
    active: bool,
    started_at: u64,
    shown: HashSet<(usize, usize)>,
    submitted: bool,
    delta: Option<f64>,
    calibration_requests: Vec<CalibrationRequest>,
    calibrated_delta: Option<f64>,
    sweep: Option<CalibrationResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub plan: SessionPlan,
    events: Vec<SessionEvent>,
    completed: bool,
    cursor: Cursor,
}

impl SessionLog {
    pub fn new(plan: SessionPlan) -> Self {
        Self { plan, events: Vec::new(), completed: false, cursor: Cursor::default() }
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn completed(&self) -> bool {
        self.completed
    }

    pub fn last_t_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_ms)
    }

    /// The last stage started and whether it is still running.
    pub fn current_stage(&self) -> Option<(usize, &Stage, bool)> {
        self.cursor.stage.map(|i| (i, &self.plan.stages[i], self.cursor.active))
    }

    pub fn active_stage(&self) -> Option<(usize, &Stage)> {
        match self.current_stage() {
            Some((i, s, true)) => Some((i, s)),
            _ => None,
        }
    }

    pub fn next_stage_index(&self) -> Option<usize> {
        let next = self.cursor.stage.map_or(0, |i| i + 1);
        (next < self.plan.stages.len()).then_some(next)
    }

    /// Divider accepted during calibration, if any.
    pub fn calibrated_delta(&self) -> Option<f64> {
        self.cursor.calibrated_delta
    }

    /// Divider currently being tuned during calibration.
    pub fn calibration_delta(&self) -> f64 {
        self.cursor.delta.unwrap_or(DEFAULT_DELTA)
    }

    pub fn resonance_sweep(&self) -> Option<&CalibrationResult> {
        self.cursor.sweep.as_ref()
    }

    /// Appends an event after checking it against the current stage.
    ///
    /// A timed stage whose planned duration has elapsed by `event.t_ms` is
    /// completed first. Questionnaire submissions and an accepted
    /// calibration complete their stage. Rejected events leave the log
    /// unchanged apart from any timed completion.
    pub fn advance(&mut self, event: SessionEvent) -> Result<()> {
        self.apply(event, true)
    }

    /// Completes a timed stage whose planned duration has elapsed by `t_ms`.
    pub fn tick(&mut self, t_ms: u64) -> Result<bool> {
        self.check_order(t_ms)?;
        Ok(self.auto_complete_timed(t_ms))
    }

    pub fn start_next_stage(&mut self, t_ms: u64) -> Result<usize> {
        let next = self
            .next_stage_index()
            .ok_or_else(|| Error::ProtocolViolation("no stage left to start".into()))?;
        let kind = self.plan.stages[next].kind;
        self.advance(SessionEvent::new(t_ms, EventKind::StageStarted { stage: next, kind }))?;
        Ok(next)
    }

    pub fn complete_current_stage(&mut self, t_ms: u64) -> Result<usize> {
        let (stage, _) = self
            .active_stage()
            .ok_or_else(|| Error::ProtocolViolation("no stage is running".into()))?;
        self.advance(SessionEvent::new(t_ms, EventKind::StageCompleted { stage }))?;
        Ok(stage)
    }

    fn check_order(&self, t_ms: u64) -> Result<()> {
        if t_ms < self.last_t_ms() {
            return Err(Error::ProtocolViolation(format!(
                "event at {t_ms} ms precedes the last event at {} ms",
                self.last_t_ms()
            )));
        }
        Ok(())
    }

    fn auto_complete_timed(&mut self, t_ms: u64) -> bool {
        let Some((stage, s)) = self.active_stage() else { return false };
        let Some(dur) = s.planned_duration_ms() else { return false };
        let end = self.cursor.started_at + dur;
        if t_ms < end {
            return false;
        }
        self.push_completed(SessionEvent::new(end, EventKind::StageCompleted { stage }));
        true
    }

    fn push_completed(&mut self, event: SessionEvent) {
        self.cursor.active = false;
        if self.cursor.stage == Some(self.plan.stages.len() - 1) {
            self.completed = true;
        }
        self.events.push(event);
    }

    fn apply(&mut self, event: SessionEvent, auto: bool) -> Result<()> {
        if self.completed {
            return Err(Error::ProtocolViolation("session already completed".into()));
        }
        self.check_order(event.t_ms)?;
        if auto && !matches!(event.kind, EventKind::StageCompleted { .. }) {
            self.auto_complete_timed(event.t_ms);
        }
        let t = event.t_ms;
        let active = self.active_stage().map(|(i, s)| (i, *s));
        let violation = |what: &str| {
            let here = active.map_or("no running stage".to_string(), |(_, s)| s.kind.label());
            Err(Error::ProtocolViolation(format!("{what} not allowed during {here}")))
        };

        match &event.kind {
            EventKind::StageStarted { stage, kind } => {
                if active.is_some() {
                    return violation("stage_started");
                }
                if Some(*stage) != self.next_stage_index() || self.plan.stages[*stage].kind != *kind {
                    return Err(Error::ProtocolViolation(format!(
                        "stage {stage} ({}) is not the next stage",
                        kind.label()
                    )));
                }
                self.cursor.stage = Some(*stage);
                self.cursor.active = true;
                self.cursor.started_at = t;
                self.cursor.shown.clear();
                self.cursor.submitted = false;
                if *kind == StageKind::Calibration {
                    self.cursor.delta = Some(DEFAULT_DELTA);
                    self.cursor.calibration_requests.clear();
                }
                self.events.push(event);
            }
            EventKind::StageCompleted { stage } => match active {
                Some((i, _)) if i == *stage => self.push_completed(event),
                _ => return violation("stage_completed for another stage"),
            },
            EventKind::IbiSample { ibi_ms } => {
                if !(ibi_ms.is_finite() && *ibi_ms > 0.0) {
                    return Err(Error::Validation(format!("ibi_ms must be positive, got {ibi_ms}")));
                }
                self.events.push(event);
            }
            EventKind::GuideFrameEmitted { .. } => match active {
                Some((_, s)) if s.guide_active() => self.events.push(event),
                _ => return violation("guide_frame_emitted"),
            },
            EventKind::StimulusShown { seq_index, position, .. } => match active {
                Some((_, s)) if matches!(s.kind, StageKind::Nback { .. }) => {
                    self.cursor.shown.insert((*seq_index, *position));
                    self.events.push(event);
                }
                _ => return violation("stimulus_shown"),
            },
            EventKind::Response(r) => match active {
                Some((_, s)) if matches!(s.kind, StageKind::Nback { .. }) => {
                    if !self.cursor.shown.contains(&(r.seq_index, r.position)) {
                        return Err(Error::ProtocolViolation(format!(
                            "response to stimulus {}:{} that was never shown",
                            r.seq_index, r.position
                        )));
                    }
                    if !(r.latency_ms >= 0.0 && r.latency_ms <= self.plan.nback.onset_interval_ms as f64) {
                        return Err(Error::Validation(format!("latency {} ms outside the answer window", r.latency_ms)));
                    }
                    self.events.push(event);
                }
                _ => return violation("response"),
            },
            EventKind::QuestionnaireSubmitted { questionnaire, answers } => {
                let Some((stage, s)) = active else { return violation("questionnaire_submitted") };
                match (s.kind, questionnaire) {
                    (StageKind::Stai { .. }, Questionnaire::Stai) => {
                        let items = assess::answers::<STAI_ITEMS>(answers)?;
                        assess::score_stai6(&StaiShortResponse { items, item_keys: self.plan.stai_keys })?;
                    }
                    (StageKind::UseQuestionnaire, Questionnaire::Use) => {
                        let items = assess::answers::<USE_ITEMS>(answers)?;
                        assess::score_use(&UseResponse { items })?;
                    }
                    _ => return violation("this questionnaire"),
                }
                if self.cursor.submitted {
                    return violation("a second submission");
                }
                self.cursor.submitted = true;
                self.events.push(event);
                if auto {
                    self.push_completed(SessionEvent::new(t, EventKind::StageCompleted { stage }));
                }
            }
            EventKind::CalibrationEvent(c) => {
                let Some((stage, s)) = active else { return violation("calibration_event") };
                if s.kind != StageKind::Calibration {
                    return violation("calibration_event");
                }
                match c {
                    CalibrationEvent::Request { request } => {
                        self.cursor.calibration_requests.push(*request);
                        let outcome = calibrate_interactive(DEFAULT_DELTA, self.cursor.calibration_requests.iter().copied());
                        match outcome {
                            Ok(CalibrationResult::Interactive { delta, .. }) => {
                                self.cursor.delta = Some(delta);
                                self.cursor.calibrated_delta = Some(delta);
                                self.events.push(event);
                                if auto {
                                    self.push_completed(SessionEvent::new(t, EventKind::StageCompleted { stage }));
                                }
                            }
                            Err(Error::CalibrationAbandoned) => {
                                // Not accepted yet: replay the requests so far to get the running divider.
                                let running = self.cursor.calibration_requests.iter().copied().chain([CalibrationRequest::Accept]);
                                if let Ok(CalibrationResult::Interactive { delta, .. }) = calibrate_interactive(DEFAULT_DELTA, running) {
                                    self.cursor.delta = Some(delta);
                                }
                                self.events.push(event);
                            }
                            Ok(_) | Err(_) => unreachable!("interactive calibration yields an interactive result"),
                        }
                    }
                    CalibrationEvent::Result(CalibrationResult::Interactive { delta, .. }) => {
                        let (lo, hi) = DELTA_BOUNDS;
                        if !(lo..=hi).contains(delta) {
                            return Err(Error::Validation(format!("divider {delta} outside [{lo}, {hi}]")));
                        }
                        self.cursor.delta = Some(*delta);
                        self.cursor.calibrated_delta = Some(*delta);
                        self.events.push(event);
                        if auto {
                            self.push_completed(SessionEvent::new(t, EventKind::StageCompleted { stage }));
                        }
                    }
                    CalibrationEvent::Result(result) => {
                        self.cursor.sweep = Some(result.clone());
                        self.events.push(event);
                    }
                }
            }
            EventKind::Note { .. } => self.events.push(event),
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine { v: SCHEMA_VERSION, plan: std::borrow::Cow::Borrowed(&self.plan) })
            .expect("plan serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&event_line(e));
            out.push('\n');
        }
        out
    }

    /// Parses and re-validates a persisted log.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty log".into() })?;
        let header: HeaderLine =
            serde_json::from_str(header).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if header.v != SCHEMA_VERSION {
            return Err(Error::Parse { line: 1, message: format!("unsupported schema version {}", header.v) });
        }
        let mut log = SessionLog::new(header.plan.into_owned());
        for (i, line) in lines {
            let parsed: EventLine =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            if parsed.v != SCHEMA_VERSION {
                return Err(Error::Parse { line: i + 1, message: format!("unsupported schema version {}", parsed.v) });
            }
            log.apply(parsed.event.into_owned(), false)
                .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        }
        Ok(log)
    }

    /// IBI samples recorded within `[start_ms, end_ms)`.
    pub fn ibi_between(&self, start_ms: u64, end_ms: u64) -> IbiSeries {
        let mut series = IbiSeries::new(SignalSource::Replay);
        for e in &self.events {
            if let EventKind::IbiSample { ibi_ms } = e.kind {
                if e.t_ms >= start_ms && e.t_ms < end_ms {
                    // Duplicated timestamps are dropped rather than failing the whole extraction.
                    let _ = series.push(IbiSample { t_ms: e.t_ms, ibi_ms });
                }
            }
        }
        series
    }

    /// `[started, completed)` times of a stage, if it ran to completion.
    pub fn stage_window(&self, stage: usize) -> Option<(u64, u64)> {
        let mut start = None;
        for e in &self.events {
            match e.kind {
                EventKind::StageStarted { stage: s, .. } if s == stage => start = Some(e.t_ms),
                EventKind::StageCompleted { stage: s } if s == stage => return start.map(|st| (st, e.t_ms)),
                _ => {}
            }
        }
        None
    }

    /// Events between a stage's start and completion (exclusive of both).
    pub fn stage_events(&self, stage: usize) -> &[SessionEvent] {
        let start = self
            .events
            .iter()
            .position(|e| matches!(e.kind, EventKind::StageStarted { stage: s, .. } if s == stage));
        let Some(start) = start else { return &[] };
        let end = self.events[start..]
            .iter()
            .position(|e| matches!(e.kind, EventKind::StageCompleted { stage: s } if s == stage))
            .map_or(self.events.len(), |off| start + off);
        &self.events[start + 1..end]
    }
}

/// Serializes one event as a persisted log line (no trailing newline).
pub fn event_line(event: &SessionEvent) -> String {
    serde_json::to_string(&EventLine { v: SCHEMA_VERSION, event: std::borrow::Cow::Borrowed(event) })
        .expect("event serializes")
}

/// Per-participant outcome measures extracted from a completed log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub condition: Condition,
    /// RMSSD (s) during N-back 1, the intervention, and N-back 2.
    pub hrv: [Option<f64>; 3],
    pub nback: [Option<f64>; 2],
    pub stai: [Option<f64>; 3],
    pub use_total: Option<f64>,
}

pub fn extract_measures(log: &SessionLog) -> Result<ParticipantRecord> {
    if !log.completed() {
        return Err(Error::InsufficientData(format!(
            "session for {} is not completed",
            log.plan.participant_id
        )));
    }
    let plan = &log.plan;

    let mut hrv = [None; 3];
    for (slot, time) in hrv.iter_mut().zip(1u8..=3) {
        let Some((start, end)) = plan.hrv_stage(time).and_then(|i| log.stage_window(i)) else { continue };
        let series = log.ibi_between(start, end);
        let cleaned = artifact_filter(&series, DEFAULT_ARTIFACT_THRESHOLD)?;
        *slot = rmssd(&cleaned).ok().map(|v| v.value_s);
    }

    let mut nback = [None; 2];
    let mut stai = [None; 3];
    let mut use_total = None;
    for (i, stage) in plan.stages.iter().enumerate() {
        match stage.kind {
            StageKind::Nback { index, training } if (1..=2).contains(&index) => {
                nback[index as usize - 1] = score_nback_stage(log, i, training)?;
            }
            StageKind::Stai { index } if (1..=3).contains(&index) => {
                if let Some(answers) = submitted_answers(log, i, Questionnaire::Stai) {
                    let items = assess::answers::<STAI_ITEMS>(&answers)?;
                    let score = assess::score_stai6(&StaiShortResponse { items, item_keys: plan.stai_keys })?;
                    stai[index as usize - 1] = Some(score.value);
                }
            }
            StageKind::UseQuestionnaire => {
                if let Some(answers) = submitted_answers(log, i, Questionnaire::Use) {
                    let items = assess::answers::<USE_ITEMS>(&answers)?;
                    use_total = Some(assess::score_use(&UseResponse { items })?.total as f64);
                }
            }
            _ => {}
        }
    }

    Ok(ParticipantRecord {
        participant_id: plan.participant_id.clone(),
        condition: plan.condition,
        hrv,
        nback,
        stai,
        use_total,
    })
}

fn submitted_answers(log: &SessionLog, stage: usize, which: Questionnaire) -> Option<Vec<u8>> {
    log.events.iter().skip_while(|e| !matches!(e.kind, EventKind::StageStarted { stage: s, .. } if s == stage)).find_map(|e| match &e.kind {
        EventKind::QuestionnaireSubmitted { questionnaire, answers } if *questionnaire == which => Some(answers.clone()),
        _ => None,
    })
}

/// Rebuilds the stimulus plan from the letters shown and scores the responses.
pub fn score_nback_stage(log: &SessionLog, stage: usize, training: bool) -> Result<Option<f64>> {
    let mut letters: Vec<Vec<Option<char>>> = Vec::new();
    let mut responses: Vec<ResponseEvent> = Vec::new();
    for e in log.stage_events(stage) {
        match &e.kind {
            EventKind::StimulusShown { seq_index, position, letter } => {
                if letters.len() <= *seq_index {
                    letters.resize(seq_index + 1, Vec::new());
                }
                let seq = &mut letters[*seq_index];
                if seq.len() <= *position {
                    seq.resize(position + 1, None);
                }
                seq[*position] = Some(*letter);
            }
            EventKind::Response(r) => responses.push(*r),
            _ => {}
        }
    }
    if letters.is_empty() {
        return Ok(None);
    }
    let sequences: Vec<Vec<char>> = letters
        .into_iter()
        .map(|seq| seq.into_iter().map(|c| c.unwrap_or('\0')).collect())
        .collect();
    let plan = StimulusPlan::from_letters(log.plan.nback.n, sequences, usize::from(training));
    if plan.scored_positions() == 0 {
        return Ok(None);
    }
    Ok(Some(cogtask::score(&plan, &responses, &log.plan.nback)?.pct_correct))
}
