use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum RclError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("undefined input: {0}")]
    UndefinedInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at step {step}: total loss is not finite")]
    Diverged { step: usize },

    #[error("bad format: {0}")]
    Format(String),
}

impl RclError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RclError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, RclError>;
