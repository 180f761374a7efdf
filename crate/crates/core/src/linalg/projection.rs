use crate::error::{check_dim, Error, Result};

use super::norms::{optimal_perturbation, p_norm, NormOrder};
use super::vector::{norm2, sign};

/// Euclidean projection of `x` onto the ball `{y : ‖y − center‖_p ≤ eps}`.
///
/// Points already inside the ball are returned unchanged (bitwise). `p = 2`
/// rescales radially, `p = ∞` clips coordinate-wise and `p = 1` uses the
/// sort-and-threshold simplex projection on `|x − center|`.
pub fn project_ball(x: &[f64], center: &[f64], eps: f64, p: NormOrder) -> Result<Vec<f64>> {
    check_dim(center.len(), x.len())?;
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be finite and >= 0, got {eps}")));
    }
    let d: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
    match p {
        NormOrder::Two => {
            let n = norm2(&d);
            if n <= eps {
                return Ok(x.to_vec());
            }
            let s = eps / n;
            Ok(center.iter().zip(&d).map(|(c, di)| c + s * di).collect())
        }
        NormOrder::Infinity => Ok(x
            .iter()
            .zip(center)
            .zip(&d)
            .map(|((&xi, &c), &di)| {
                if di > eps {
                    c + eps
                } else if di < -eps {
                    c - eps
                } else {
                    xi
                }
            })
            .collect()),
        NormOrder::One => {
            if p_norm(&d, NormOrder::One) <= eps {
                return Ok(x.to_vec());
            }
            if eps == 0.0 {
                return Ok(center.to_vec());
            }
            let (k, top_mean) = simplex_support(&d, eps);
            let shift = eps / k as f64;
            Ok(center
                .iter()
                .zip(&d)
                .map(|(c, &di)| c + sign(di) * ((di.abs() - top_mean) + shift).max(0.0))
                .collect())
        }
        NormOrder::Finite(_) => Err(Error::UnsupportedNorm(p)),
    }
}

/// Size `k` and mean magnitude of the support of the projection onto the ℓ1
/// ball of `radius`, assuming `‖d‖₁ > radius`. The soft threshold is
/// `θ = mean − radius/k`; callers subtract the mean first so that a single
/// dominant coordinate lands exactly on the radius however large it is.
fn simplex_support(d: &[f64], radius: f64) -> (usize, f64) {
    let mut mags: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut best = (1, mags[0]);
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let k = j + 1;
        if m - (cumsum - radius) / k as f64 > 0.0 {
            best = (k, cumsum / k as f64);
        } else {
            break;
        }
    }
    best
}

/// Finite-step projection onto the unit ℓp sphere. Only `p = 2` has a closed
/// form here (plain normalization).
pub fn project_sphere(v: &[f64], p: NormOrder) -> Result<Vec<f64>> {
    if p != NormOrder::Two {
        return Err(Error::UnsupportedNorm(p));
    }
    let n = norm2(v);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `lim_{α→∞} Π_{‖·‖_p = 1}(v_prev + α·step)`. The limit does not depend on
/// `v_prev`; it is the optimal linear perturbation of `step`.
pub fn project_sphere_limit(v_prev: &[f64], step: &[f64], p: NormOrder) -> Result<Vec<f64>> {
    check_dim(step.len(), v_prev.len())?;
    if !p.is_standard() {
        return Err(Error::UnsupportedNorm(p));
    }
    optimal_perturbation(step, p)
}

/// Elementwise `max(−ε, min(ε, x))`.
pub fn clip_max_min(x: &[f64], eps: f64) -> Vec<f64> {
    x.iter().map(|&v| (-eps).max(eps.min(v))).collect()
}

/// Elementwise `min(ε, max(−ε, x))`.
pub fn clip_min_max(x: &[f64], eps: f64) -> Vec<f64> {
    x.iter().map(|&v| eps.min((-eps).max(v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_ball_rescales() {
        assert_eq!(project_ball(&[5.0, 0.0], &[0.0, 0.0], 2.0, NormOrder::Two).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn linf_ball_clips() {
        assert_eq!(
            project_ball(&[3.0, -0.5], &[0.0, 0.0], 1.0, NormOrder::Infinity).unwrap(),
            vec![1.0, -0.5]
        );
    }

    #[test]
    fn l1_ball_known_point() {
        // (2,1) → shrink by θ = 1 → (1, 0)
        let y = project_ball(&[2.0, 1.0], &[0.0, 0.0], 1.0, NormOrder::One).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15 && y[1].abs() < 1e-15);
    }

    #[test]
    fn l1_huge_step_lands_on_radius() {
        let y = project_ball(&[0.3 + 1e12 * 0.7, -0.2 - 1e12 * 0.1], &[0.3, -0.2], 0.5, NormOrder::One).unwrap();
        assert_eq!(y, vec![0.8, -0.2]);
    }

    #[test]
    fn inside_is_identity() {
        let x = [0.1, -0.2, 0.05];
        let c = [0.0, 0.1, 0.0];
        for p in NormOrder::STANDARD {
            assert_eq!(project_ball(&x, &c, 10.0, p).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn zero_radius_collapses_to_center() {
        for p in NormOrder::STANDARD {
            let y = project_ball(&[1.0, -2.0], &[0.5, 0.5], 0.0, p).unwrap();
            assert_eq!(y, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn finite_orders_unsupported() {
        assert_eq!(
            project_ball(&[1.0], &[0.0], 1.0, NormOrder::Finite(3.0)),
            Err(Error::UnsupportedNorm(NormOrder::Finite(3.0)))
        );
        assert!(project_sphere(&[1.0, 2.0], NormOrder::One).is_err());
    }

    #[test]
    fn sphere_limit_ignores_previous_iterate() {
        let a = project_sphere_limit(&[1.0, 0.0], &[3.0, 4.0], NormOrder::Two).unwrap();
        let b = project_sphere_limit(&[-7.0, 2.0], &[3.0, 4.0], NormOrder::Two).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            project_sphere_limit(&[0.3, 0.1], &[2.0, -5.0], NormOrder::Infinity).unwrap(),
            vec![1.0, -1.0]
        );
        assert_eq!(project_sphere_limit(&[1.0, 0.0], &[0.0, 0.0], NormOrder::Two), Err(Error::ZeroVector));
    }
}
