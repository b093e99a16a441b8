use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operator {name} is not invertible (smallest singular value {sigma_min:.3e})")]
    NotInvertible { name: String, sigma_min: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty sample")]
    EmptySample,

    #[error("point outside the evaluation domain: {point:?}")]
    OutOfDomain { point: Vec<f64> },

    #[error("no valid grid points remain after floor culling: {0}")]
    EmptyGrid(String),

    #[error(transparent)]
    Poly(#[from] crate::poly::PolyError),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
