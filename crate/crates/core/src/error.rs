use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("CSI error fraction beta = {0} must satisfy 0 <= beta < 1")]
    InvalidBeta(f64),

    #[error("RIS coefficient {index} has modulus {modulus}, expected 1")]
    NotUnitModulus { index: usize, modulus: f64 },

    #[error("combiner for stream ({user}, {stream}) is zero")]
    ZeroCombiner { user: usize, stream: usize },

    #[error("user {user}: estimate norm {estimate_norm} is below the error radius {radius}")]
    UnreliableEstimate {
        user: usize,
        estimate_norm: f64,
        radius: f64,
    },

    #[error("penalty weight omega must be positive, got {0}")]
    NonPositiveOmega(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("augmented Lagrangian became non-finite at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        trace: Box<crate::solver::SolveTrace>,
    },
}
