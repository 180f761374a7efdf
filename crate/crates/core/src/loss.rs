//! Softmax cross-entropy with inverse temperature β.

/// `softmax(β z)`, computed with max subtraction.
pub fn softmax(logits: &[f64], beta: f64) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|&z| (beta * (z - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `(−β z_y + log Σ_k exp(β z_k)) / β`; β = 1 is the usual cross-entropy.
pub fn cross_entropy(logits: &[f64], y: usize, beta: f64) -> f64 {
    let top = crate::linalg::vector::argmax(logits);
    let m = logits[top];
    // The max term contributes exactly 1; ln_1p keeps the rest accurate.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &z)| (beta * (z - m)).exp())
        .sum();
    (rest.ln_1p() - beta * (logits[y] - m)) / beta
}

/// Gradient of [`cross_entropy`] with respect to the logits,
/// `softmax(β z) − e_y`. The `y` entry is formed as `−Σ_{i≠y} s_i` so it
/// keeps full relative precision when the model is confident.
pub fn cross_entropy_grad(logits: &[f64], y: usize, beta: f64) -> Vec<f64> {
    let mut g = softmax(logits, beta);
    let rest: f64 = g.iter().enumerate().filter(|&(i, _)| i != y).map(|(_, s)| s).sum();
    g[y] = -rest;
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        assert!((cross_entropy(&[0.0, 0.0], 0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy_grad(&[0.0, 0.0], 0, 1.0), vec![-0.5, 0.5]);
    }

    #[test]
    fn confident_prediction() {
        let want = (-10f64).exp().ln_1p();
        assert!((cross_entropy(&[10.0, 0.0], 0, 1.0) - want).abs() < 1e-18);
        assert!(cross_entropy(&[1000.0, -1000.0], 1, 1.0).is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = [0.3, -1.2, 0.8, 2.0];
        for beta in [0.5, 1.0, 3.0] {
            for y in 0..4 {
                let g = cross_entropy_grad(&z, y, beta);
                for i in 0..4 {
                    let h = 1e-6;
                    let mut zp = z;
                    let mut zm = z;
                    zp[i] += h;
                    zm[i] -= h;
                    let fd = (cross_entropy(&zp, y, beta) - cross_entropy(&zm, y, beta)) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn large_temperature_approaches_label_flip() {
        let g = cross_entropy_grad(&[2.0, 1.0], 1, 1e6);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] + 1.0).abs() < 1e-12);
    }
}
