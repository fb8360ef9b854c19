use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,
    #[error("length mismatch: {values} values but {weights} weights")]
    LengthMismatch { values: usize, weights: usize },
    #[error("negative weight {weight} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("weights sum to zero")]
    ZeroTotalWeight,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("standard deviation must be positive and finite, got {0}")]
    InvalidStddev(f64),
    #[error("cdf is not monotone near {at}")]
    NonMonotoneCdf { at: f64 },
    #[error("cdf bounds invalid: {0}")]
    InvalidCdfBounds(String),
    #[error("dimension mismatch: expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} out of range 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("support of size {size} exceeds the brute-force limit {limit}")]
    SupportTooLarge { size: usize, limit: usize },
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("split too small: {0}")]
    SplitTooSmall(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
