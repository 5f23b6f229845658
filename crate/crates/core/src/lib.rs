//! Algorithms and data model for a breathing-guide biofeedback study:
//! heart-rate variability, the breathing guide, a simulated participant,
//! the N-back task, questionnaires, session protocol and statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assess;
pub mod biosignal;
pub mod closedloop;
pub mod cogtask;
pub mod error;
pub mod guide;
pub mod protocol;
pub mod stats;
pub mod subjectsim;

pub use assess::{StaiScore, StaiShortResponse, UseResponse, UseScore};
pub use biosignal::{IbiSample, IbiSeries, RmssdValue, SignalSource};
pub use cogtask::{Button, NBackConfig, ResponseEvent, StimulusPlan, TaskScore};
pub use error::{Error, Result};
pub use guide::{CalibrationRequest, CalibrationResult, GuideFrame, GuideMode, GuideState};
pub use protocol::{Attention, Condition, EventKind, Feedback, SessionEvent, SessionLog, SessionPlan};
pub use subjectsim::{SubjectParams, SubjectState};
