use thiserror::Error;

/// Errors produced anywhere in the descriptor pipeline.
#[derive(Debug, Error)]
pub enum EptError {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed on {subject}: {source}")]
    Stage {
        stage: &'static str,
        subject: String,
        #[source]
        source: Box<EptError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EptError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        EptError::Validation(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str, subject: impl Into<String>) -> Self {
        EptError::Stage {
            stage,
            subject: subject.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, EptError>;
