//! Seeded experiment runner for the tsppml benchmark.
//!
//! An [`ExperimentConfig`] names one experiment kind; [`run_experiment`]
//! executes it for every dataset and seed and returns a [`MetricsReport`]
//! that can be written as CSV or rendered as text.

use std::path::Path;

pub mod config;
pub mod report;
pub mod runner;

pub use config::{DatasetRef, EpsStudy, ExperimentConfig, ExperimentKind, FedMethod, MpcSettings};
pub use report::{render_report, MetricsReport, RunRow, RunStatus};
pub use runner::run_experiment;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("report: {0}")]
    Report(String),
}

impl BenchError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        BenchError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
