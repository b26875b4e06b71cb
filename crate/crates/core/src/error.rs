use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate interaction for user {user}, item {item}")]
    DuplicatePair { user: u64, item: u64 },

    #[error("unknown user id {0}")]
    UnknownUser(u64),

    #[error("unknown item id {0}")]
    UnknownItem(u64),

    #[error("monotonic chain violated in {count} place(s); first at user {user}, item {item}, stage {stage}")]
    ChainViolation {
        count: usize,
        user: u64,
        item: u64,
        stage: usize,
    },

    #[error("stage {stage} out of range for T = {stages}")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("invalid stage pair ({present}, {subsequent}) for T = {stages}")]
    InvalidPair {
        present: usize,
        subsequent: usize,
        stages: usize,
    },

    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("model schema does not match dataset schema")]
    SchemaMismatch,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            message: message.into(),
        }
    }
}
