//! The live session service.

mod http;
mod session;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use bloom_core::assess::Questionnaires;
use bloom_core::protocol::build_plan;
use bloom_core::Condition;
use serde::{Deserialize, Deserializer, Serialize};
use tokio::net::TcpListener;

pub use http::router;
pub use session::SessionHandle;

use crate::config::{ServiceConfig, SourceConfig};
use crate::engine::EngineConfig;
use crate::error::{GatewayError, Result};
use crate::ingest::ingest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    /// Either `{"attention":..,"feedback":..}` or a string like `"focus-dynamic"`.
    #[serde(deserialize_with = "condition_any")]
    pub condition: Condition,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    /// Seeds the session's N-back sequences.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn condition_any<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Condition, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Text(String),
        Fields(Condition),
    }
    match Either::deserialize(d)? {
        Either::Text(s) => s.parse().map_err(serde::de::Error::custom),
        Either::Fields(c) => Ok(c),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub participant_id: String,
    pub condition: Condition,
}

pub struct Service {
    config: ServiceConfig,
    questionnaires: Questionnaires,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
    counter: AtomicU64,
}

impl Service {
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>> {
        config.validate()?;
        std::fs::create_dir_all(&config.data_dir).map_err(|e| GatewayError::io(&config.data_dir, e))?;
        let questionnaires = match &config.questionnaires {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))?;
                Questionnaires::from_toml(&text)?
            }
            None => Questionnaires::bundled(),
        };
        Ok(Arc::new(Self { config, questionnaires, sessions: RwLock::new(BTreeMap::new()), counter: AtomicU64::new(0) }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn questionnaires(&self) -> &Questionnaires {
        &self.questionnaires
    }

    pub async fn create_session(&self, req: CreateSession) -> Result<SessionHandle> {
        let participant = req.participant_id.trim();
        if participant.is_empty() {
            return Err(GatewayError::Config("participant_id must not be empty".into()));
        }
        if let Some(src) = &req.source {
            src.validate()?;
        }
        let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
        let slug: String =
            participant.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        let id = format!("{n:04}-{slug}");

        let mut plan = build_plan(participant, req.condition);
        plan.stai_keys = self.questionnaires.stai_keys();
        let engine = EngineConfig {
            frame_rate_hz: self.config.frame_rate_hz,
            frame_log_interval_ms: self.config.frame_log_interval_ms,
            seed: req.seed.unwrap_or(n),
            ..EngineConfig::default()
        };
        let handle = session::spawn_session(id.clone(), plan, engine, &self.config.data_dir)?;

        if let Some(src) = &req.source {
            let mut feed = ingest(src, Some(handle.probe()), handle.origin).await?;
            let h = handle.clone();
            tokio::spawn(async move {
                while let Some(sample) = feed.samples.recv().await {
                    if h.ibi(sample).await.is_err() {
                        return;
                    }
                }
                let text = match feed.task.await {
                    Ok(Ok(report)) => format!(
                        "source ended: {} lines, {} accepted, {} malformed",
                        report.lines, report.accepted, report.malformed
                    ),
                    Ok(Err(e)) => format!("source stopped: {e}"),
                    Err(e) => format!("source task failed: {e}"),
                };
                tracing::info!(session = %h.id, "{text}");
                let _ = h.note(text).await;
            });
        }

        self.sessions.write().expect("session map lock").insert(id, handle.clone());
        Ok(handle)
    }

    pub fn session(&self, id: &str) -> Result<SessionHandle> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownSession(id.to_string()))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        self.sessions
            .read()
            .expect("session map lock")
            .values()
            .map(|h| SessionSummary {
                session_id: h.id.clone(),
                participant_id: h.plan.participant_id.clone(),
                condition: h.plan.condition,
            })
            .collect()
    }
}

/// Binds the configured address. A busy port is reported as a connection error.
pub async fn bind(config: &ServiceConfig) -> Result<TcpListener> {
    TcpListener::bind((config.bind.as_str(), config.port))
        .await
        .map_err(|e| GatewayError::Connection(format!("cannot listen on {}:{}: {e}", config.bind, config.port)))
}

pub async fn serve_on(listener: TcpListener, service: Arc<Service>) -> Result<()> {
    let addr = listener.local_addr().map_err(|e| GatewayError::Connection(e.to_string()))?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(service)).await.map_err(|e| GatewayError::Connection(e.to_string()))
}

pub async fn serve(config: ServiceConfig) -> Result<()> {
    let service = Service::new(config)?;
    let listener = bind(service.config()).await?;
    serve_on(listener, service).await
}
