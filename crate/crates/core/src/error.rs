use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header field `{field}`: {reason}")]
    MalformedHeader { field: String, reason: String },

    #[error("sample count mismatch: header declares {declared}, file holds {actual}")]
    SampleCountMismatch { declared: usize, actual: usize },

    #[error("annotation out of range: row {row} field `{field}` = {value} (record length {len})")]
    AnnotationOutOfRange {
        row: usize,
        field: &'static str,
        value: usize,
        len: usize,
    },

    #[error("malformed annotation row {row}: {reason}")]
    MalformedAnnotation { row: usize, reason: String },

    #[error("unknown rhythm category `{0}`")]
    UnknownCategory(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("segment length mismatch: expected {expected}, got {actual}")]
    SegmentLength { expected: usize, actual: usize },

    #[error("unsupported Daubechies order {0} (supported 1..=8)")]
    UnsupportedOrder(usize),

    #[error("signal of length {len} too short for {levels} decomposition levels")]
    SignalTooShort { len: usize, levels: usize },

    #[error("inconsistent wavelet coefficients: {0}")]
    InconsistentCoeffs(String),

    #[error("zero level {level} exceeds decomposition depth {levels}")]
    ZeroLevelOutOfRange { level: usize, levels: usize },

    #[error("zero variance")]
    ZeroVariance,

    #[error("category {category} has {available} < {requested}")]
    UnderPopulated {
        category: char,
        available: usize,
        requested: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("label {label} out of range for {classes} categories")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("divergence detected in `{0}`")]
    Divergence(String),

    #[error("threshold too high: no sample reaches it (max observed score {max_score})")]
    ThresholdTooHigh { max_score: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Divergence(_) => 4,
            Error::Config { .. } => 2,
            _ => 1,
        }
    }
}
