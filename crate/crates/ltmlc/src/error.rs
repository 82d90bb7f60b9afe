//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition or invariant violation, naming the offender.
    #[error("validation: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("bad magic: not a checkpoint file")]
    BadMagic,

    /// Checkpoint file ended before the declared content.
    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    /// Manifest declares tensor bytes outside the payload.
    #[error("payload overflow: {0}")]
    PayloadOverflow(String),

    #[error("checkpoint manifest: {0}")]
    Manifest(String),

    /// Malformed CSV content, with 1-based line number where known.
    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    /// Invalid run configuration; `pointer` is a JSON pointer to the offending key.
    #[error("config error at {pointer}: {msg}")]
    Config { pointer: String, msg: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(line: usize, msg: impl Into<String>) -> Self {
        Error::Csv {
            line,
            msg: msg.into(),
        }
    }
}
