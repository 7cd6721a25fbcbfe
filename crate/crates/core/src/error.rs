use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("invalid audio signal: {0}")]
    InvalidSignal(String),

    #[error("unknown pretext task '{0}'")]
    UnknownTask(String),

    #[error("empty frame series for task '{0}'")]
    EmptySeries(String),

    #[error("degenerate embedding for sample '{0}' (zero norm)")]
    DegenerateEmbedding(String),

    #[error("constant pretext label '{0}': all pairwise distances are zero")]
    ConstantLabel(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mixed value kinds for task '{0}'")]
    MixedKinds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty class '{0}'")]
    EmptyClass(String),

    #[error("missing task column '{0}'")]
    MissingTask(String),

    #[error("non-finite value at row {row} ('{sample}'), column '{task}'")]
    NonFinite { row: usize, sample: String, task: String },

    #[error("duplicate sample id '{id}' at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("empty class label at line {0}")]
    EmptyLabel(usize),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("missing audio files: {}", .0.join(", "))]
    MissingAudio(Vec<String>),

    #[error("unknown task id '{0}' in subset")]
    UnknownSubsetTask(String),

    #[error("{count} candidate subsets exceed the exhaustive limit of {limit}; use greedy mode")]
    SubsetGuard { count: u128, limit: u128 },

    #[error("at least two classes required, found {0}")]
    TooFewClasses(usize),

    #[error("undefined correlation: {0} is constant")]
    UndefinedCorrelation(&'static str),

    #[error("subset size {size} exceeds population {available}")]
    SubsetTooLarge { size: usize, available: usize },

    #[error("malformed embedding cache: {0}")]
    Cache(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav decode error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Wav { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
