//! Crate-wide error type with process exit-code mapping for the CLI.

use std::path::PathBuf;

/// Unified error for every pipeline stage.
///
/// Exit-code contract: 0 ok, 2 config, 3 IO/format, 4 numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or incompatible dimensions requested by the caller.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shape mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed on-disk data (bad magic, truncated blob, invariant violation).
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Underlying filesystem failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// NaN/Inf encountered, or a numerical check failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 IO/format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
