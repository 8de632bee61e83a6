use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
///
/// The variants map onto the CLI exit codes: contract and bounds violations
/// exit with 2, format problems with 3, everything else with 1.
#[derive(Debug, Error)]
pub enum RnaError {
    #[error("format error: {0}")]
    Format(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for {what} (size {size})")]
    Bounds {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("non-finite {term} loss at iteration {iter}")]
    NonFinite { term: String, iter: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl RnaError {
    pub fn format(msg: impl Into<String>) -> Self {
        RnaError::Format(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        RnaError::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RnaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            RnaError::Contract(_) | RnaError::Bounds { .. } | RnaError::NonFinite { .. } => 2,
            RnaError::Format(_) | RnaError::Image { .. } => 3,
            RnaError::NotFound(_) | RnaError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, RnaError>;
