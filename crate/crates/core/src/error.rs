use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate batch: every position is masked")]
    DegenerateBatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("synthetic corpus: {0}")]
    Synthetic(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("missing generated next events for instance {0}; run the `generate` stage first")]
    MissingGenerations(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("stage `{stage}` requires output of stage `{missing}` ({path})")]
    PipelineOrder {
        stage: &'static str,
        missing: &'static str,
        path: PathBuf,
    },

    #[error("agreement: {0}")]
    Agreement(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::DegenerateBatch => "degenerate_batch",
            Error::Empty(_) => "empty",
            Error::Malformed { .. } => "malformed",
            Error::Schema { .. } => "schema",
            Error::InvalidInstance(_) => "invalid_instance",
            Error::Vocab(_) => "vocab",
            Error::Synthetic(_) => "synthetic",
            Error::Diverged { .. } => "diverged",
            Error::MissingGenerations(_) => "missing_generations",
            Error::Checkpoint(e) => e.kind(),
            Error::Config(_) => "config",
            Error::PipelineOrder { .. } => "pipeline_order",
            Error::Agreement(_) => "agreement",
            Error::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl CheckpointError {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "checkpoint_bad_magic",
            CheckpointError::VersionMismatch { .. } => "checkpoint_version",
            CheckpointError::Truncated => "checkpoint_truncated",
            CheckpointError::KindMismatch { .. } => "checkpoint_kind",
            CheckpointError::Corrupt(_) => "checkpoint_corrupt",
        }
    }
}
