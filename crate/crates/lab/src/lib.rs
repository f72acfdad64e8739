//! Configuration-driven experiments over the `gwi-core` library: path
//! simulation, estimation, weak-limit comparisons and generating-function
//! diagnostics, each writing plot-ready CSVs and a `summary.json`.

pub mod config;
pub mod presets;
mod run;

use std::io;

use gwi_core::analysis::AnalysisError;
use gwi_core::dist::DistError;
use gwi_core::gwi::GwiError;
use gwi_core::limit::LimitError;
use gwi_core::mc::McError;
use thiserror::Error;

pub use config::ExperimentConfig;
pub use run::{run, Check, RunOptions, Summary};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl LabError {
    /// Process exit code: 2 for configuration and output-path problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Io { .. } => 2,
            LabError::Numerical(_) => 3,
        }
    }
}

impl From<DistError> for LabError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::InvalidParameter(_) | DistError::Domain(_) => LabError::Config(e.to_string()),
            DistError::Overflow => LabError::Numerical(e.to_string()),
        }
    }
}

impl From<GwiError> for LabError {
    fn from(e: GwiError) -> Self {
        match e {
            GwiError::Dist(inner) => inner.into(),
            GwiError::Overflow { .. } => LabError::Numerical(e.to_string()),
            _ => LabError::Config(e.to_string()),
        }
    }
}

impl From<AnalysisError> for LabError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::BlowUp { .. } | AnalysisError::EmptySample => LabError::Numerical(e.to_string()),
            AnalysisError::Dist(inner) => inner.into(),
            AnalysisError::Gwi(inner) => inner.into(),
            _ => LabError::Config(e.to_string()),
        }
    }
}

impl From<LimitError> for LabError {
    fn from(e: LimitError) -> Self {
        LabError::Config(e.to_string())
    }
}

impl From<McError> for LabError {
    fn from(e: McError) -> Self {
        LabError::Config(e.to_string())
    }
}
