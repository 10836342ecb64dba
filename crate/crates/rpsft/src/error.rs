//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (non-finite entries, inconsistent lengths).
    #[error("validation error: {0}")]
    Validation(String),

    /// Argument outside the documented range or shape mismatch.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Numerical failure (non-convergence, undefined ratio).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training loop failure (divergence, unmet target loss).
    #[error("training error: {0}")]
    Training(String),

    /// ODE integration failure.
    #[error("integration error: {0}")]
    Integration(String),

    /// Checkpoint container format violation, with the byte offset of the fault.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Configuration parse or range failure.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parameter(_) | Error::Config(_) => 2,
            Error::Numerical(_) | Error::Training(_) | Error::Integration(_) => 3,
            Error::Format { .. } | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
