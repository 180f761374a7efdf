use crate::error::Result;

use super::mat::Mat;

/// A linear map that can be applied forward (`A v`) and backward (`Aᵀ u`)
/// without necessarily being materialized.
pub trait LinearOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
    fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for Mat {
    fn input_dim(&self) -> usize {
        self.cols()
    }

    fn output_dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matvec(v)
    }

    fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.matvec_t(u)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        (**self).apply(v)
    }

    fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        (**self).apply_transpose(u)
    }
}
