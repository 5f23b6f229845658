//! Edge of the bloom platform: heartbeat ingestion, the live session
//! service with its event stream, headless simulated sessions, and study
//! analysis over stored logs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod config;
pub mod engine;
pub mod error;
pub mod headless;
pub mod ingest;
pub mod service;
pub mod wire;

pub use analyze::{analyze, write_report, Analysis};
pub use config::{ServiceConfig, SourceConfig};
pub use engine::{ClientEvent, EngineConfig, SessionEngine, StreamEvent};
pub use error::{GatewayError, Result};
pub use headless::{run_headless, run_headless_with, simulate_condition, simulate_study, HeadlessConfig, ResponseModel};
pub use ingest::{ingest, Ingest, IngestReport};
pub use service::{serve, Service};
