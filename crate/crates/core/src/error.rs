use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("numeric fault in {layer}")]
    NumericFault { layer: String },

    #[error("stale tape: parameters changed since forward (tape version {tape}, store version {store})")]
    StaleTape { tape: u64, store: u64 },

    #[error("loss handle does not belong to this tape")]
    InvalidHandle,

    #[error("contract error: {0}")]
    Contract(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
