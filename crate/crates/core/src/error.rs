use thiserror::Error;

use crate::linalg::NormOrder;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector is identically zero")]
    ZeroVector,

    #[error("unsupported norm order {0} for this operation")]
    UnsupportedNorm(NormOrder),

    #[error("invalid norm order: {0}")]
    InvalidNorm(String),

    #[error("({p},{q}) operator norm is NP-hard to compute; no closed form")]
    NpHardCombination { p: NormOrder, q: NormOrder },

    #[error("jacobi svd did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("matrix {rows}x{cols} exceeds the desk-scale limit of {limit}")]
    TooLarge { rows: usize, cols: usize, limit: usize },

    #[error("jacobian product vanished at iteration {iteration}")]
    ZeroJacobianProduct { iteration: usize },

    #[error("convolution geometry error: {0}")]
    GeometryError(String),

    #[error("design matrix is rank deficient (condition ratio {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("invalid dataset kind `{0}`")]
    InvalidKind(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed network file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
