// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the engine, intervention, tracing,
/// analysis or harness layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model, intervention or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller supplied an input that violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A hook was driven in an order it does not accept.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An internal invariant no longer holds (corrupted hook state, bad row).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// A statistic is not defined for the given data.
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// An iterative fit failed to converge.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// A file line could not be parsed.
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A file parsed but its contents violate the format's invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// The engine and the reference decoder disagree.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
