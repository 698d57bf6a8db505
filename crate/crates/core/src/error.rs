use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator and its harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration that cannot be run (bad value, infeasible density, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A malformed line in a key=value configuration file.
    #[error("{path}:{line}: key `{key}`: {message}")]
    ConfigSyntax {
        path: String,
        line: usize,
        key: String,
        message: String,
    },

    /// The physics step could not restore the non-overlap invariant.
    #[error("physics failure at tick {tick}: {message}")]
    Physics { tick: u64, message: String },

    /// A learner produced a non-finite action value.
    #[error("non-finite Q value for agent {agent} at tick {tick}")]
    NonFinite { agent: usize, tick: u64 },

    /// An action outlived the event watchdog.
    #[error("agent {agent} waited {waited} ticks for an event (limit {limit}) at tick {tick}")]
    Watchdog {
        agent: usize,
        tick: u64,
        waited: u64,
        limit: u64,
    },

    /// Some cells of a sweep failed; their rows carry the cause.
    #[error("{failed} of {total} sweep cells failed")]
    SweepCells { failed: usize, total: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::ConfigSyntax { .. } | Error::InvalidInput(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
