use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the laboratory. Messages are prefixed with the
/// module that produced them so they reach the CLI user unambiguously.
#[derive(Debug, Error)]
pub enum Error {
    #[error("datagen: schedule error: {0}")]
    Schedule(String),
    #[error("datagen: generation error: {0}")]
    Generation(String),
    #[error("datagen: stream error: {0}")]
    Stream(String),
    #[error("datagen: format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("{module}: validation error: {msg}")]
    Validation { module: &'static str, msg: String },
    #[error("model: shape error: {0}")]
    Shape(String),
    #[error("model: state error: {0}")]
    State(String),
    #[error("model: loss error: {0}")]
    Loss(String),
    #[error("model: range error: {0}")]
    Range(String),
    #[error("model: numeric error: non-finite gradient in parameter block {0}")]
    Numeric(String),
    #[error("model: checkpoint error: {0}")]
    Checkpoint(String),
    #[error("trainer: config error: {0}")]
    Config(String),
    #[error("probing: probe error: {0}")]
    Probe(String),
    #[error("metrics: prototype error: {0}")]
    Prototype(String),
    #[error("metrics: cosine error: {0}")]
    Cosine(String),
    #[error("metrics: artifact error: {0}")]
    Artifact(String),
    #[error("report: comparison error: {0}")]
    Comparison(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report: json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Validation {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
