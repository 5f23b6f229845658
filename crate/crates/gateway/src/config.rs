use std::path::{Path, PathBuf};

use bloom_core::SubjectParams;
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

pub const PORT_ENV: &str = "BLOOM_PORT";
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_FRAME_RATE_HZ: f64 = 20.0;
pub const MIN_FRAME_RATE_HZ: f64 = 10.0;

/// Where a session's heartbeats come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    /// Listen on `port` for wire-protocol lines.
    TcpStream { port: u16 },
    /// Play back a `t_ms,ibi_ms` CSV at `speed` times real time.
    Replay { path: PathBuf, #[serde(default = "one")] speed: f64 },
    /// A simulated subject following the session's guide.
    Simulated { #[serde(default)] params: SubjectParams },
}

fn one() -> f64 {
    1.0
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceConfig::Replay { speed, .. } if !(speed.is_finite() && *speed > 0.0) => {
                Err(GatewayError::Config(format!("replay speed must be positive, got {speed}")))
            }
            SourceConfig::Simulated { params } => Ok(params.validate()?),
            _ => Ok(()),
        }
    }
}

/// Service settings, read from a TOML file.
///
/// ```toml
/// port = 8080
/// bind = "127.0.0.1"
/// data_dir = "bloom-data"
/// frame_rate_hz = 20.0
/// questionnaires = "questionnaires.toml"   # optional
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub bind: String,
    pub data_dir: PathBuf,
    pub frame_rate_hz: f64,
    pub questionnaires: Option<PathBuf>,
    /// Spacing of guide frames written to the session log; the stream
    /// still carries every frame.
    pub frame_log_interval_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            bind: "127.0.0.1".into(),
            data_dir: PathBuf::from("bloom-data"),
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            questionnaires: None,
            frame_log_interval_ms: 1000,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies `BLOOM_PORT` if set.
    pub fn with_env(self) -> Result<Self> {
        self.with_port_override(std::env::var(PORT_ENV).ok().as_deref())
    }

    pub fn with_port_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.port = v.trim().parse().map_err(|_| GatewayError::Config(format!("{PORT_ENV}={v} is not a port number")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz >= MIN_FRAME_RATE_HZ) {
            return Err(GatewayError::Config(format!(
                "frame_rate_hz must be at least {MIN_FRAME_RATE_HZ}, got {}",
                self.frame_rate_hz
            )));
        }
        if self.frame_log_interval_ms == 0 {
            return Err(GatewayError::Config("frame_log_interval_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn frame_period_ms(&self) -> f64 {
        1000.0 / self.frame_rate_hz
    }
}
