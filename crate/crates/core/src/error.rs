use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum OpeError {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("training fault at epoch {epoch}: {reason}")]
    TrainingFault { epoch: usize, reason: String },

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("trial {trial} (seed {seed}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<OpeError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model format: {0}")]
    Format(String),
}

impl OpeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        OpeError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, OpeError>;
