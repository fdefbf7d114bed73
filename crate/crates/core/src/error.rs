use thiserror::Error;

/// Errors raised by the re-ranking pipeline and its I/O helpers.
#[derive(Debug, Error)]
pub enum RfeError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<RfeError>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed index file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RfeError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        RfeError::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        RfeError::Input(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        RfeError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, RfeError>;
