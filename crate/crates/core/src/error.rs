use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reduction")]
    EmptyReduction,

    #[error("dataset too small: {n} pairs cannot fill {splits} splits")]
    DatasetTooSmall { n: usize, splits: usize },

    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("no data")]
    NoData,

    #[error("degenerate log-probability: {0}")]
    DegenerateLogProb(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("non-finite loss at example {index}: {detail}")]
    NonFiniteLoss { index: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
