//! Dense linear algebra for desk-scale problems: a row-major matrix, p-norms
//! and their gradients, Hölder duality, ℓp-ball projections and a one-sided
//! Jacobi SVD.

mod mat;
mod norms;
mod operator;
mod projection;
mod svd;
pub mod vector;

pub use mat::Mat;
pub use operator::LinearOperator;
pub use norms::{holder_conjugate, optimal_perturbation, p_norm, p_norm_gradient, NormOrder, TIE_RTOL};
pub use projection::{
    clip_max_min, clip_min_max, project_ball, project_sphere, project_sphere_limit,
};
pub use svd::{least_squares, svd, SvdResult, MAX_DIM, MAX_SWEEPS};
