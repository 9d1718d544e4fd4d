//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("degenerate dataset: {0}")]
    Degenerate(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Training produced a non-finite loss.
    #[error("non-finite training loss at inner step {step}")]
    Divergence { step: usize },

    /// The requested operation is not supported by the chosen model.
    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
