//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration detected before any work starts.
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an interface contract (bad shape, out-of-range
    /// action, index past the end of a trajectory).
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity surfaced where a finite number is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A checkpoint file is missing, truncated, or inconsistent with the
    /// architecture it claims to describe.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("dataset malformed at line {line}: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("dataset inconsistent with its header: {0}")]
    HeaderMismatch(String),
}

impl Error {
    /// Process exit code the CLI maps this error to: configuration and
    /// usage errors exit 2, runtime failures exit 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            _ => 3,
        }
    }
}
