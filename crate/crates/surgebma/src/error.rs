use std::path::PathBuf;

use surgebma_core::Error as ModelError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Input { path: path.into(), message: message.into() }
    }

    /// Process exit status: 1 for computational failures (convergence gate
    /// and friends), 2 for bad input or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Model(e) => match e {
                ModelError::ConvergenceGate { .. }
                | ModelError::NoFeasibleStart
                | ModelError::DegenerateChains(_)
                | ModelError::ProposalCovariance
                | ModelError::NonFiniteEvidence(_)
                | ModelError::BelowThresholdRegime
                | ModelError::AllDrawsFlagged
                | ModelError::TooFewExceedances => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}
