use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::vector::{max_abs, norm2, sign};

/// Relative tolerance used to detect ties in the maximum absolute entry.
pub const TIE_RTOL: f64 = 1e-12;

/// Order of an ℓp norm, `p ∈ [1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    One,
    Two,
    Infinity,
    /// Finite `p > 1`, other than 2.
    Finite(f64),
}

impl NormOrder {
    /// Normalizes `1`, `2` and `∞` to their dedicated variants.
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidNorm(format!("p must be >= 1, got {p}")));
        }
        Ok(if p == 1.0 {
            NormOrder::One
        } else if p == 2.0 {
            NormOrder::Two
        } else if p.is_infinite() {
            NormOrder::Infinity
        } else {
            NormOrder::Finite(p)
        })
    }

    pub fn exponent(self) -> f64 {
        match self {
            NormOrder::One => 1.0,
            NormOrder::Two => 2.0,
            NormOrder::Infinity => f64::INFINITY,
            NormOrder::Finite(p) => p,
        }
    }

    /// True for the three orders with closed-form projections: 1, 2 and ∞.
    pub fn is_standard(self) -> bool {
        !matches!(self, NormOrder::Finite(_))
    }

    pub const STANDARD: [NormOrder; 3] = [NormOrder::One, NormOrder::Two, NormOrder::Infinity];

    fn validate(self) -> Result<()> {
        if let NormOrder::Finite(p) = self {
            if !(p.is_finite() && p > 1.0) {
                return Err(Error::InvalidNorm(format!("finite order must be in (1, ∞), got {p}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::One => write!(f, "1"),
            NormOrder::Two => write!(f, "2"),
            NormOrder::Infinity => write!(f, "inf"),
            NormOrder::Finite(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(NormOrder::Infinity),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidNorm(format!("cannot parse `{s}` as a norm order")))
                .and_then(NormOrder::new),
        }
    }
}

/// ‖v‖_p
pub fn p_norm(v: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::One => v.iter().map(|x| x.abs()).sum(),
        NormOrder::Two => norm2(v),
        NormOrder::Infinity => max_abs(v),
        NormOrder::Finite(p) => {
            let m = max_abs(v);
            if m == 0.0 {
                return 0.0;
            }
            m * v.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

/// Gradient of ‖v‖_p: `sign(v) ⊙ |v|^{p-1} / ‖v‖_p^{p-1}`.
///
/// For `p = ∞` this is the limit `|I|⁻¹ sign(v) ⊙ 1_I` over the index set `I`
/// attaining the maximum (ties within [`TIE_RTOL`]); for `p = 1` it is
/// `sign(v)` with `sign(0) = 0`.
///
/// The map is positively homogeneous of degree zero, which is why the same
/// routine doubles as the dual normalization in every power-method update.
pub fn p_norm_gradient(v: &[f64], p: NormOrder) -> Result<Vec<f64>> {
    p.validate()?;
    let m = max_abs(v);
    if m == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(match p {
        NormOrder::One => v.iter().map(|&x| sign(x)).collect(),
        NormOrder::Two => {
            let n = norm2(v);
            v.iter().map(|x| x / n).collect()
        }
        NormOrder::Infinity => {
            let threshold = m * (1.0 - TIE_RTOL);
            let ties = v.iter().filter(|x| x.abs() >= threshold).count() as f64;
            v.iter()
                .map(|&x| if x.abs() >= threshold { sign(x) / ties } else { 0.0 })
                .collect()
        }
        NormOrder::Finite(p) => {
            // Scale by the max entry so |w|^p cannot overflow.
            let w: Vec<f64> = v.iter().map(|x| x / m).collect();
            let norm = w.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
            let denom = norm.powf(p - 1.0);
            w.iter().map(|&x| sign(x) * x.abs().powf(p - 1.0) / denom).collect()
        }
    })
}

/// Hölder conjugate `p*` with `1/p + 1/p* = 1`.
pub fn holder_conjugate(p: NormOrder) -> NormOrder {
    match p {
        NormOrder::One => NormOrder::Infinity,
        NormOrder::Two => NormOrder::Two,
        NormOrder::Infinity => NormOrder::One,
        NormOrder::Finite(p) => NormOrder::new(p / (p - 1.0)).unwrap_or(NormOrder::Finite(p / (p - 1.0))),
    }
}

/// `argmax_{‖v‖_p ≤ 1} vᵀz = sign(z) ⊙ |z|^{p*-1} / ‖z‖_{p*}^{p*-1}`.
///
/// For `p = 1` the maximizer is not unique when several entries tie for the
/// largest magnitude; the uniform combination over the tie set is returned.
pub fn optimal_perturbation(z: &[f64], p: NormOrder) -> Result<Vec<f64>> {
    p_norm_gradient(z, holder_conjugate(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = tol);
        }
    }

    #[test]
    fn norms_of_simple_vectors() {
        assert_eq!(p_norm(&[3.0, 4.0], NormOrder::Two), 5.0);
        assert_eq!(p_norm(&[1.0, -2.0, 3.0], NormOrder::One), 6.0);
        assert_eq!(p_norm(&[1.0, -7.0, 3.0], NormOrder::Infinity), 7.0);
        assert_abs_diff_eq!(p_norm(&[1.0, 1.0], NormOrder::Finite(3.0)), 2f64.powf(1.0 / 3.0), epsilon = 1e-15);
        assert_eq!(p_norm(&[0.0, 0.0], NormOrder::Finite(3.0)), 0.0);
    }

    #[test]
    fn gradients_of_simple_vectors() {
        close(&p_norm_gradient(&[3.0, 4.0], NormOrder::Two).unwrap(), &[0.6, 0.8], 1e-15);
        close(&p_norm_gradient(&[2.0, -5.0, 5.0], NormOrder::Infinity).unwrap(), &[0.0, -0.5, 0.5], 0.0);
        close(&p_norm_gradient(&[1.0, -2.0], NormOrder::One).unwrap(), &[1.0, -1.0], 0.0);
        assert_eq!(p_norm_gradient(&[0.0; 3], NormOrder::Two), Err(Error::ZeroVector));
    }

    #[test]
    fn conjugates() {
        assert_eq!(holder_conjugate(NormOrder::Two), NormOrder::Two);
        assert_eq!(holder_conjugate(NormOrder::One), NormOrder::Infinity);
        assert_eq!(holder_conjugate(NormOrder::Infinity), NormOrder::One);
        assert_eq!(holder_conjugate(NormOrder::Finite(3.0)), NormOrder::Finite(1.5));
        assert_eq!(holder_conjugate(NormOrder::Finite(1.5)), NormOrder::Finite(3.0));
    }

    #[test]
    fn optimal_perturbation_special_cases() {
        close(&optimal_perturbation(&[3.0, 4.0], NormOrder::Two).unwrap(), &[0.6, 0.8], 1e-15);
        close(&optimal_perturbation(&[2.0, -5.0], NormOrder::Infinity).unwrap(), &[1.0, -1.0], 0.0);
        close(&optimal_perturbation(&[2.0, -5.0, 5.0], NormOrder::One).unwrap(), &[0.0, -0.5, 0.5], 0.0);
        assert_eq!(optimal_perturbation(&[0.0], NormOrder::One), Err(Error::ZeroVector));
    }

    #[test]
    fn parse_and_display() {
        for s in ["1", "2", "inf", "3"] {
            let p: NormOrder = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("0.5".parse::<NormOrder>().is_err());
        assert!("abc".parse::<NormOrder>().is_err());
        assert_eq!(NormOrder::new(2.0).unwrap(), NormOrder::Two);
    }

    #[test]
    fn invalid_finite_order_rejected() {
        assert!(p_norm_gradient(&[1.0], NormOrder::Finite(0.5)).is_err());
    }
}
