//! Analysis pipeline: permutation tests for the 2x2 x time design,
//! rank-sum tests, descriptives and the study report.

pub mod dataset;
pub mod descriptive;
pub mod permutation;
pub mod report;
pub mod synthetic;
pub mod wilcoxon;

pub use dataset::{Dataset, Factor, Measure, ParticipantRow};
pub use descriptive::{summarize, CellSummary};
pub use permutation::{
    perm_test_between_interaction, perm_test_interaction, perm_test_main, Effect, Method, TestResult, DEFAULT_N_PERM,
};
pub use report::{analyze_study, BatteryEntry, Outcome, StudyReport, BATTERY};
pub use wilcoxon::wilcoxon_rank_sum;
