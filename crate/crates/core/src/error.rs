use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pilot image {index} has neither a rendered counterpart nor a precomputed loss")]
    MissingCounterpart { index: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no strictly feasible starting point: {0}")]
    NoStrictInterior(String),

    #[error("exhaustive enumeration limited to 20 clients, got {0}")]
    TooLarge(usize),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// True when the error (possibly wrapped in a stage) reports infeasibility.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) | Error::NoStrictInterior(_) => true,
            Error::Stage { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}
