//! Heartbeat sources: TCP or stdin wire lines, recorded CSV files, and a
//! simulated subject.

use std::path::Path;
use std::time::Duration;

use bloom_core::guide::step;
use bloom_core::subjectsim::next_ibi;
use bloom_core::{GuideMode, GuideState, IbiSample, SubjectParams, SubjectState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufRead, AsyncBufReadExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::config::SourceConfig;
use crate::error::{GatewayError, Result};
use crate::wire::{parse_replay_csv, parse_wire_line, LineGuard};

const CHANNEL_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub malformed: usize,
}

impl From<&LineGuard> for IngestReport {
    fn from(g: &LineGuard) -> Self {
        Self { lines: g.lines, accepted: g.accepted, malformed: g.malformed }
    }
}

/// A running source: samples arrive on `samples`, and `task` finishes with
/// the line counts or the reason the stream stopped.
pub struct Ingest {
    pub samples: mpsc::Receiver<IbiSample>,
    pub task: JoinHandle<Result<IngestReport>>,
}

/// What a simulated subject can see of the session it is attached to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideProbe {
    pub guide: GuideState,
    pub mode: Option<GuideMode>,
    pub stressed: bool,
}

impl Default for GuideProbe {
    fn default() -> Self {
        Self { guide: GuideState::new(0), mode: None, stressed: false }
    }
}

impl GuideProbe {
    /// Guide phase extrapolated to `t_ms`; `None` while the guide is off.
    pub fn phase_at(&self, t_ms: u64) -> Option<f64> {
        let mode = self.mode?;
        Some(step(self.guide, t_ms.saturating_sub(self.guide.t_ms), &mode).phase)
    }
}

/// Starts a source. `origin` is the clock zero for simulated beats, and
/// `probe` lets a simulated subject follow a live guide.
pub async fn ingest(source: &SourceConfig, probe: Option<watch::Receiver<GuideProbe>>, origin: Instant) -> Result<Ingest> {
    source.validate()?;
    let (tx, rx) = mpsc::channel(CHANNEL_CAPACITY);
    let task = match source.clone() {
        SourceConfig::TcpStream { port } => {
            let listener = TcpListener::bind(("0.0.0.0", port))
                .await
                .map_err(|e| GatewayError::Connection(format!("cannot listen on port {port}: {e}")))?;
            tokio::spawn(serve_tcp(listener, tx))
        }
        SourceConfig::Replay { path, speed } => {
            let text = tokio::fs::read_to_string(&path)
                .await
                .map_err(|e| GatewayError::Connection(format!("cannot read {}: {e}", path.display())))?;
            tokio::spawn(async move { replay_text(&text, speed, tx).await })
        }
        SourceConfig::Simulated { params } => {
            let probe = probe.unwrap_or_else(|| watch::channel(GuideProbe::default()).1);
            tokio::spawn(simulate(params, probe, origin, tx))
        }
    };
    Ok(Ingest { samples: rx, task })
}

/// Reads wire lines until end of input or until the receiver goes away.
pub async fn read_wire<R: AsyncBufRead + Unpin>(reader: R, tx: &mpsc::Sender<IbiSample>) -> Result<IngestReport> {
    let mut guard = LineGuard::new();
    let mut lines = reader.lines();
    while let Some(line) = lines.next_line().await.map_err(|e| GatewayError::Connection(e.to_string()))? {
        if let Some(sample) = guard.feed(parse_wire_line(&line))? {
            if tx.send(sample).await.is_err() {
                break;
            }
        }
    }
    Ok(IngestReport::from(&guard))
}

/// Accepts one sensor connection at a time and keeps listening after each
/// disconnects.
async fn serve_tcp(listener: TcpListener, tx: mpsc::Sender<IbiSample>) -> Result<IngestReport> {
    let mut total = IngestReport::default();
    loop {
        let (socket, peer) = tokio::select! {
            accepted = listener.accept() => accepted.map_err(|e| GatewayError::Connection(e.to_string()))?,
            _ = tx.closed() => return Ok(total),
        };
        tracing::info!(%peer, "sensor connected");
        let report = read_wire(tokio::io::BufReader::new(socket), &tx).await?;
        total.lines += report.lines;
        total.accepted += report.accepted;
        total.malformed += report.malformed;
        tracing::info!(%peer, ?report, "sensor disconnected");
    }
}

/// Plays back a recording, pacing samples by their recorded timestamps
/// divided by `speed`.
pub async fn replay_text(text: &str, speed: f64, tx: mpsc::Sender<IbiSample>) -> Result<IngestReport> {
    if !(speed.is_finite() && speed > 0.0) {
        return Err(GatewayError::Config(format!("replay speed must be positive, got {speed}")));
    }
    let rows = parse_replay_csv(text)?;
    let mut guard = LineGuard::new();
    let start = Instant::now();
    let mut t0 = None;
    for row in rows {
        let Some(sample) = guard.feed(row)? else { continue };
        let first = *t0.get_or_insert(sample.t_ms);
        let offset = Duration::from_secs_f64((sample.t_ms - first) as f64 / 1000.0 / speed);
        tokio::time::sleep_until(start + offset).await;
        if tx.send(sample).await.is_err() {
            break;
        }
    }
    Ok(IngestReport::from(&guard))
}

pub async fn replay_file(path: &Path, speed: f64, tx: mpsc::Sender<IbiSample>) -> Result<IngestReport> {
    let text = tokio::fs::read_to_string(path).await.map_err(|e| GatewayError::io(path, e))?;
    replay_text(&text, speed, tx).await
}

/// A simulated subject beating in real time and breathing with whatever
/// guide the probe shows.
async fn simulate(
    params: SubjectParams,
    probe: watch::Receiver<GuideProbe>,
    origin: Instant,
    tx: mpsc::Sender<IbiSample>,
) -> Result<IngestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut state = SubjectState::new(origin.elapsed().as_millis() as u64);
    let mut report = IngestReport::default();
    loop {
        let seen = *probe.borrow();
        let (sample, next) = next_ibi(&params, state, seen.phase_at(state.t_ms), seen.stressed, &mut rng);
        state = next;
        tokio::time::sleep_until(origin + Duration::from_millis(sample.t_ms)).await;
        if tx.send(sample).await.is_err() {
            return Ok(report);
        }
        report.lines += 1;
        report.accepted += 1;
    }
}
