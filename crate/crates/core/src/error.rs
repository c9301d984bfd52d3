use thiserror::Error;

use crate::learners::LearnerTrace;
use crate::metalearners::MetaCheckpoint;

/// What a run had produced before it diverged.
#[derive(Debug, Clone)]
pub enum PartialRun {
    Learner(LearnerTrace),
    Meta(Vec<MetaCheckpoint>),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("run diverged at step {step}")]
    Diverged { step: usize, partial: Box<PartialRun> },

    #[error("projection requested at mode {0} whose target coefficient is zero")]
    UndefinedMode(usize),

    #[error("hypothesis budget exceeded: {0}")]
    Budget(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("family mismatch: {0}")]
    FamilyMismatch(String),

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error("malformed trace file: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::ShapeMismatch(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
