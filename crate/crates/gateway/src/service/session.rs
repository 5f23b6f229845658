//! One task per live session. Every input (heartbeats, client events,
//! experimenter commands and the frame clock) goes through the same queue,
//! so the log sees a single ordered history.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use bloom_core::protocol::{event_line, StageKind};
use bloom_core::{IbiSample, SessionLog, SessionPlan};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::{Instant, MissedTickBehavior};

use crate::engine::{ClientEvent, EngineConfig, FrameMsg, SessionEngine, Snapshot, StageView, StreamEvent};
use crate::error::{GatewayError, Result};
use crate::ingest::GuideProbe;

const COMMAND_CAPACITY: usize = 256;

pub(crate) enum Command {
    Ibi(IbiSample),
    Client(ClientEvent, oneshot::Sender<bloom_core::Result<u64>>),
    Advance(oneshot::Sender<bloom_core::Result<StageView>>),
    Note(String),
    Snapshot(oneshot::Sender<Snapshot>),
    Log(oneshot::Sender<String>),
    Subscribe(oneshot::Sender<mpsc::UnboundedReceiver<StreamEvent>>),
}

/// Cheap, cloneable access to a running session.
#[derive(Clone)]
pub struct SessionHandle {
    pub id: String,
    pub plan: SessionPlan,
    pub log_path: PathBuf,
    /// Clock zero of the session; event times are milliseconds since this.
    pub origin: Instant,
    commands: mpsc::Sender<Command>,
    frames: watch::Receiver<Option<FrameMsg>>,
    probe: watch::Receiver<GuideProbe>,
}

impl SessionHandle {
    async fn request<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).await.map_err(|_| GatewayError::SessionClosed(self.id.clone()))?;
        rx.await.map_err(|_| GatewayError::SessionClosed(self.id.clone()))
    }

    /// Returns the session time at which the event was recorded.
    pub async fn submit(&self, event: ClientEvent) -> Result<u64> {
        Ok(self.request(|tx| Command::Client(event, tx)).await??)
    }

    pub async fn advance(&self) -> Result<StageView> {
        Ok(self.request(Command::Advance).await??)
    }

    pub async fn snapshot(&self) -> Result<Snapshot> {
        self.request(Command::Snapshot).await
    }

    pub async fn log_text(&self) -> Result<String> {
        self.request(Command::Log).await
    }

    pub async fn ibi(&self, sample: IbiSample) -> Result<()> {
        self.commands.send(Command::Ibi(sample)).await.map_err(|_| GatewayError::SessionClosed(self.id.clone()))
    }

    pub async fn note(&self, text: String) -> Result<()> {
        self.commands.send(Command::Note(text)).await.map_err(|_| GatewayError::SessionClosed(self.id.clone()))
    }

    /// Ordered stage, stimulus and feedback messages, plus a view of the
    /// latest guide frame. Slow readers miss frames but never messages.
    pub async fn subscribe(&self) -> Result<(mpsc::UnboundedReceiver<StreamEvent>, watch::Receiver<Option<FrameMsg>>)> {
        let events = self.request(Command::Subscribe).await?;
        Ok((events, self.frames.clone()))
    }

    pub fn probe(&self) -> watch::Receiver<GuideProbe> {
        self.probe.clone()
    }
}

struct Actor {
    engine: SessionEngine,
    origin: Instant,
    subscribers: Vec<mpsc::UnboundedSender<StreamEvent>>,
    frames: watch::Sender<Option<FrameMsg>>,
    probe: watch::Sender<GuideProbe>,
    writer: BufWriter<File>,
    persisted: usize,
    path: PathBuf,
}

impl Actor {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn handle(&mut self, cmd: Command) {
        let now = self.now_ms().max(self.engine.now_ms());
        match cmd {
            Command::Ibi(sample) => {
                if let Err(e) = self.engine.ingest_ibi(now, sample.ibi_ms) {
                    tracing::debug!(error = %e, "heartbeat not recorded");
                }
            }
            Command::Client(event, reply) => {
                let _ = reply.send(self.engine.submit(now, event).map(|_| now));
            }
            Command::Advance(reply) => {
                let result = self
                    .engine
                    .advance_stage(now)
                    .map(|_| self.engine.snapshot().current_stage.expect("a stage was just started"));
                let _ = reply.send(result);
            }
            Command::Note(text) => {
                if let Err(e) = self.engine.note(now, text) {
                    tracing::debug!(error = %e, "note not recorded");
                }
            }
            Command::Snapshot(reply) => {
                let _ = self.engine.advance_to(now);
                let _ = reply.send(self.engine.snapshot());
            }
            Command::Log(reply) => {
                let _ = reply.send(self.engine.log().to_jsonl());
            }
            Command::Subscribe(reply) => {
                let (tx, rx) = mpsc::unbounded_channel();
                self.subscribers.push(tx);
                let _ = reply.send(rx);
            }
        }
    }

    fn tick(&mut self) {
        let now = self.now_ms().max(self.engine.now_ms());
        if let Err(e) = self.engine.advance_to(now) {
            tracing::warn!(error = %e, "session clock step failed");
        }
    }

    fn publish(&mut self) {
        let mut latest = None;
        for msg in self.engine.drain() {
            match msg {
                StreamEvent::GuideFrame(f) => latest = Some(f),
                other => self.subscribers.retain(|s| s.send(other.clone()).is_ok()),
            }
        }
        if let Some(f) = latest {
            self.frames.send_replace(Some(f));
        }
        let stressed = matches!(self.engine.log().active_stage(), Some((_, s)) if matches!(s.kind, StageKind::Nback { .. }));
        self.probe.send_replace(GuideProbe { guide: self.engine.guide_state(), mode: self.engine.mode(), stressed });
        if let Err(e) = self.persist() {
            tracing::error!(path = %self.path.display(), error = %e, "cannot persist session log");
        }
    }

    fn persist(&mut self) -> std::io::Result<()> {
        let events = self.engine.log().events();
        if events.len() == self.persisted {
            return Ok(());
        }
        for e in &events[self.persisted..] {
            writeln!(self.writer, "{}", event_line(e))?;
        }
        self.persisted = events.len();
        self.writer.flush()
    }

    async fn run(mut self, mut commands: mpsc::Receiver<Command>, period: Duration) {
        let mut ticker = tokio::time::interval_at(self.origin, period);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                biased;
                cmd = commands.recv() => match cmd {
                    Some(cmd) => self.handle(cmd),
                    None => break,
                },
                _ = ticker.tick() => self.tick(),
            }
            self.publish();
        }
    }
}

/// Starts the actor for a new session and writes the log header.
pub(crate) fn spawn_session(id: String, plan: SessionPlan, cfg: EngineConfig, data_dir: &Path) -> Result<SessionHandle> {
    let engine = SessionEngine::new(plan.clone(), cfg.clone())?;
    let path = data_dir.join(format!("{id}.jsonl"));
    let file = File::create(&path).map_err(|e| GatewayError::io(&path, e))?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(SessionLog::new(plan.clone()).to_jsonl().as_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| GatewayError::io(&path, e))?;

    let origin = Instant::now();
    let (frames_tx, frames_rx) = watch::channel(None);
    let (probe_tx, probe_rx) = watch::channel(GuideProbe::default());
    let (cmd_tx, cmd_rx) = mpsc::channel(COMMAND_CAPACITY);
    let actor = Actor {
        engine,
        origin,
        subscribers: Vec::new(),
        frames: frames_tx,
        probe: probe_tx,
        writer,
        persisted: 0,
        path: path.clone(),
    };
    let period = Duration::from_secs_f64(1.0 / cfg.frame_rate_hz);
    tokio::spawn(actor.run(cmd_rx, period));
    Ok(SessionHandle { id, plan, log_path: path, origin, commands: cmd_tx, frames: frames_rx, probe: probe_rx })
}
