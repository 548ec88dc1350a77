use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("exp overflow in attention matrix at ({row}, {col}): score {score}")]
    Range { row: usize, col: usize, score: f64 },

    #[error("n = {n} exceeds the dense materialization guard of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown or removed point id {0}")]
    UnknownPoint(usize),

    #[error("support breach at ({row}, {col}): score {score} is below tau = {tau}")]
    SupportBreach {
        row: usize,
        col: usize,
        score: f64,
        tau: f64,
    },

    #[error("instance is not (tau, k, eta)-good: {0}")]
    NotGood(String),

    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("instance format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
