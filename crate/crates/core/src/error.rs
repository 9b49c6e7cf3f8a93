use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum FrapError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("unknown template `{0}`")]
    UnknownTemplate(String),

    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),

    #[error("objective is undefined without object tokens")]
    NoObjects,

    #[error("step index {t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("non-finite loss at step {}: {}", .0.step, .0.message)]
    NonFinite(Box<crate::pipeline::Diagnostic>),

    #[error("malformed csv at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl FrapError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FrapError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FrapError::Config(msg.into())
    }

    pub(crate) fn prompt(msg: impl Into<String>) -> Self {
        FrapError::Prompt(msg.into())
    }

    /// I/O failure tied to a path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FrapError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = FrapError> = std::result::Result<T, E>;
