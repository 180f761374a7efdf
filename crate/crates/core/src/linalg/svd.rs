//! One-sided (Hestenes) Jacobi SVD.
//!
//! Orthogonalizes the columns of a working copy of the matrix with plane
//! rotations, accumulating the rotations into `V`. Accurate to working
//! precision for small dense matrices, which is all this crate needs.

use crate::error::{Error, Result};

use super::mat::Mat;
use super::vector::dot;

/// Sweeps allowed before giving up.
pub const MAX_SWEEPS: usize = 60;
/// Largest accepted dimension on either axis.
pub const MAX_DIM: usize = 4096;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Thin SVD `M = U diag(σ) Vᵀ` with `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// rows × r, orthonormal columns.
    pub u_mat: Mat,
    /// Length r, non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// cols × r, orthonormal columns.
    pub v_mat: Mat,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn top(&self) -> f64 {
        self.singular_values[0]
    }

    /// r-th right singular vector (0-based).
    pub fn right_vector(&self, r: usize) -> Vec<f64> {
        self.v_mat.col(r)
    }

    pub fn left_vector(&self, r: usize) -> Vec<f64> {
        self.u_mat.col(r)
    }

    pub fn reconstruct(&self) -> Mat {
        let (m, r) = self.u_mat.shape();
        let n = self.v_mat.rows();
        Mat::from_fn(m, n, |i, j| {
            (0..r).map(|k| self.u_mat[(i, k)] * self.singular_values[k] * self.v_mat[(j, k)]).sum()
        })
    }
}

pub fn svd(m: &Mat) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows > MAX_DIM || cols > MAX_DIM {
        return Err(Error::TooLarge { rows, cols, limit: MAX_DIM });
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument("svd input contains non-finite entries".into()));
    }
    if rows >= cols {
        jacobi_tall(m)
    } else {
        let t = jacobi_tall(&m.transpose())?;
        Ok(SvdResult { u_mat: t.v_mat, singular_values: t.singular_values, v_mat: t.u_mat })
    }
}

/// Requires `rows >= cols`.
fn jacobi_tall(m: &Mat) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    // Column-major working copies.
    let mut u: Vec<Vec<f64>> = (0..cols).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns below this squared norm are numerically zero; rotating them
    // against each other only shuffles rounding noise.
    let negligible = (f64::EPSILON * m.frobenius()).powi(2);
    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        for i in 0..cols - 1 {
            for j in i + 1..cols {
                let a = dot(&u[i], &u[i]);
                let b = dot(&u[j], &u[j]);
                let d = dot(&u[i], &u[j]);
                if d == 0.0 || a.min(b) <= negligible || d.abs() <= OFF_DIAGONAL_TOL * (a * b).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (b - a) / (2.0 * d);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS });
    }

    let mut sigma: Vec<f64> = u.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let u_sorted: Vec<Vec<f64>> = order.iter().map(|&k| u[k].clone()).collect();
    let v_sorted: Vec<Vec<f64>> = order.iter().map(|&k| v[k].clone()).collect();
    sigma = order.iter().map(|&k| sigma[k]).collect();

    let cutoff = sigma[0] * f64::EPSILON * rows.max(cols) as f64;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut null_slots = Vec::new();
    for (k, col) in u_sorted.into_iter().enumerate() {
        if sigma[k] > cutoff && sigma[k] > 0.0 {
            let s = sigma[k];
            basis.push(col.into_iter().map(|x| x / s).collect());
        } else {
            sigma[k] = 0.0;
            null_slots.push(k);
            basis.push(Vec::new());
        }
    }
    complete_basis(&mut basis, &null_slots, rows);

    let u_mat = Mat::from_fn(rows, cols, |i, k| basis[k][i]);
    let v_mat = Mat::from_fn(cols, cols, |i, k| v_sorted[k][i]);
    Ok(SvdResult { u_mat, singular_values: sigma, v_mat })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let ci = &mut left[i];
    let cj = &mut right[0];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let xi = *x;
        let yj = *y;
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Fills the empty slots with unit vectors orthogonal to every other column
/// (Gram–Schmidt against canonical basis vectors, applied twice).
fn complete_basis(basis: &mut [Vec<f64>], slots: &[usize], dim: usize) {
    let mut candidate = 0;
    for &slot in slots {
        loop {
            assert!(candidate < dim, "cannot complete orthonormal basis");
            let mut w = vec![0.0; dim];
            w[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for b in basis.iter().filter(|b| !b.is_empty()) {
                    let proj = dot(&w, b);
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= proj * bi;
                    }
                }
            }
            let n = dot(&w, &w).sqrt();
            if n > 1e-6 {
                basis[slot] = w.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// Least-squares solution `X = argmin ‖A X − B‖_F` via the normal equations
/// `AᵀA X = AᵀB`, inverted through the SVD of the Gram matrix.
///
/// Fails with `RankDeficient` when `σ_min(A)/σ_max(A) < 1e-10`.
pub fn least_squares(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch { expected: a.rows(), got: b.rows() });
    }
    let at = a.transpose();
    let gram = at.matmul(a)?;
    let rhs = at.matmul(b)?;
    let dec = svd(&gram)?;
    let top = dec.top();
    let bottom = *dec.singular_values.last().expect("non-empty");
    let ratio = if top > 0.0 { (bottom / top).sqrt() } else { 0.0 };
    if ratio < 1e-10 {
        return Err(Error::RankDeficient { ratio });
    }
    // X = V Σ⁻¹ Uᵀ rhs
    let k = gram.rows();
    let ut_rhs = dec.u_mat.transpose().matmul(&rhs)?;
    let scaled = Mat::from_fn(k, rhs.cols(), |i, j| ut_rhs[(i, j)] / dec.singular_values[i]);
    dec.v_mat.matmul(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut r = crate::rng::rng(seed);
        Mat::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
    }

    fn orthonormal_cols(m: &Mat, tol: f64) {
        let g = m.transpose().matmul(m).unwrap();
        assert!(g.max_abs_diff(&Mat::identity(m.cols())) < tol, "{g:?}");
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let s = svd(&Mat::identity(3)).unwrap();
        assert_eq!(s.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix() {
        let s = svd(&Mat::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
        let v1 = s.right_vector(0);
        assert!((v1[1].abs() - 1.0).abs() < 1e-15 && v1[0] == 0.0);
    }

    #[test]
    fn reconstructs_random_wide_and_tall() {
        for (r, c, seed) in [(20, 30, 1), (30, 20, 2), (7, 7, 3), (1, 5, 4), (5, 1, 5)] {
            let m = random(r, c, seed);
            let s = svd(&m).unwrap();
            let err = s.reconstruct().sub(&m).frobenius() / m.frobenius();
            assert!(err < 1e-8, "{r}x{c}: {err}");
            orthonormal_cols(&s.u_mat, 1e-10);
            orthonormal_cols(&s.v_mat, 1e-10);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.top() <= m.frobenius() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rank_deficient_gets_completed_basis() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![0.0, 0.0, 0.0]]);
        let s = svd(&m).unwrap();
        assert_eq!(s.singular_values[2], 0.0);
        orthonormal_cols(&s.u_mat, 1e-10);
        orthonormal_cols(&s.v_mat, 1e-10);
        assert!(s.reconstruct().max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn low_rank_tall_converges() {
        // Product of thin factors with zeroed rows, like a Jacobian through dead units.
        let a = random(32, 8, 21);
        let b = random(8, 20, 22);
        let mut m = a.matmul(&b).unwrap();
        for r in (0..32).step_by(3) {
            m.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
        }
        let s = svd(&m).unwrap();
        assert!(s.singular_values[8..].iter().all(|&x| x < 1e-12 * s.top()));
        orthonormal_cols(&s.v_mat, 1e-10);
        assert!(s.reconstruct().max_abs_diff(&m) < 1e-10);
    }

    #[test]
    fn zero_matrix() {
        let s = svd(&Mat::zeros(3, 2)).unwrap();
        assert_eq!(s.singular_values, vec![0.0, 0.0]);
        orthonormal_cols(&s.u_mat, 1e-12);
    }

    #[test]
    fn too_large_rejected() {
        let m = Mat::zeros(1, MAX_DIM + 1);
        assert!(matches!(svd(&m), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn least_squares_recovers_exact_linear_map() {
        let a = random(40, 4, 9);
        let x = random(4, 3, 10);
        let b = a.matmul(&x).unwrap();
        let sol = least_squares(&a, &b).unwrap();
        assert!(sol.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn least_squares_rank_deficient() {
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
        let b = Mat::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert!(matches!(least_squares(&a, &b), Err(Error::RankDeficient { .. })));
    }
}
