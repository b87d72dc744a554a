use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input vector is empty")]
    EmptyVector,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch at layer {layer}: expected {expected}, found {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("label {label} at index {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("no training data")]
    EmptyData,

    #[error("split leaves no test instances")]
    EmptyTestSet,

    #[error("mask update set is empty")]
    EmptyMaskSet,

    #[error("class {class:?} has {found} instances, {needed} required")]
    InsufficientClass {
        class: String,
        needed: usize,
        found: usize,
    },

    #[error("no predictions to score")]
    EmptyPredictions,

    #[error("probabilities for {id:?} sum to {sum}")]
    Unnormalized { id: String, sum: f64 },

    #[error("max probability {max_prob} for {id:?} outside [1/K, 1]")]
    MaxProbOutOfRange { id: String, max_prob: f64 },

    #[error("invalid outcome at index {index}: probability {prob}, outcome {outcome}")]
    InvalidOutcome { index: usize, prob: f64, outcome: u8 },

    #[error("precision tau must be positive, got {0}")]
    InvalidTau(f64),

    #[error("bad magic {found:?} at offset {offset}")]
    BadMagic { offset: u64, found: [u8; 4] },

    #[error("unsupported format version {found} (reader supports {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("truncated file: {needed} bytes needed at offset {offset}")]
    Truncated { offset: u64, needed: u64 },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("vector for {id:?} contains a non-finite value")]
    NonFiniteVector { id: String },

    #[error("duplicate instance id {id:?}")]
    DuplicateId { id: String },

    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateLineId {
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("runs are not comparable: {0}")]
    NotComparable(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("split {index}: {source}")]
    Split {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_split(self, index: usize) -> Self {
        Error::Split {
            index,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidTau(_) | Error::NotComparable(_) => ErrorKind::Config,
            Error::Numeric(_) | Error::Unnormalized { .. } | Error::MaxProbOutOfRange { .. } => {
                ErrorKind::Numeric
            }
            Error::Split { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
