use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid context: {0}")]
    InvalidContext(String),

    #[error("{kind} id {id} out of range (size {size})")]
    OutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },

    #[error("missing edge timestamps: {0}")]
    MissingDates(String),

    #[error("budget exceeded: {what} (partial count {partial})")]
    BudgetExceeded { what: String, partial: usize },

    #[error("duplicate extent in concept set at concept {0}")]
    DuplicateExtent(usize),

    #[error("sequence overflow: {needed} tokens needed but max_len is {max_len} ({context})")]
    SequenceOverflow {
        needed: usize,
        max_len: usize,
        context: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("training diverged at epoch {epoch} (last good epoch: {last_good_epoch:?})")]
    Diverged {
        epoch: usize,
        last_good_epoch: Option<usize>,
    },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing upstream artifact {path}: run `{stage}` first")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("config hash mismatch for stage `{stage}`: artifact has {found}, current config is {expected}")]
    HashMismatch {
        stage: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetExceeded { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
