use std::path::PathBuf;

use thiserror::Error;

/// Problems with an input data file, each carrying its location.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: cannot read: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: truncated at byte {offset}: need {needed} more bytes")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("{path}: {extra} trailing bytes after byte {offset}")]
    TrailingBytes {
        path: PathBuf,
        offset: usize,
        extra: usize,
    },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: row {row}: expected {expected} columns, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: row {row}, column {col}: cannot parse {text:?}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        text: String,
    },
    #[error("{path}: row {row}, column {col}: non-finite value")]
    NonFinite { path: PathBuf, row: usize, col: usize },
    #[error("{path}: row {row}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        path: PathBuf,
        row: usize,
        label: u64,
        num_classes: usize,
    },
    #[error("{path}: label count {labels} does not match pool size {samples}")]
    LabelCountMismatch {
        path: PathBuf,
        labels: usize,
        samples: usize,
    },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("probability vector sums to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("top_n = {top_n} must be in 1..={n}")]
    TopN { top_n: usize, n: usize },
    #[error("prior for class {class} is {value}, must be positive")]
    NonPositivePrior { class: usize, value: f64 },
    #[error("probabilities are already calibrated")]
    AlreadyCalibrated,
    #[error("k = {k} must be in 1..{n}")]
    NeighborCount { k: usize, n: usize },
    #[error("budget {budget} must be in 1..={available}")]
    Budget { budget: usize, available: usize },
    #[error("weight {index} is negative or non-finite")]
    InvalidWeight { index: usize },
    #[error("all weights are zero")]
    AllWeightsZero,
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("sample {id} has no ground-truth label")]
    MissingLabel { id: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
