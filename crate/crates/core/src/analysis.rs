//! Measurements on trained networks: Jacobian spectra, alignment of attack
//! directions with singular vectors, deviation from linearity, activation
//! sharing, robust accuracy, and a trajectory-level check that logit-space
//! attacks coincide with the operator-norm power method inside a ReLU cell.

use crate::attack::{pga_attack, sample_ball_with, AdvLoss, AttackConfig, AttackInit};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::{argmax, cosine, dot, norm2};
use crate::linalg::{holder_conjugate, least_squares, p_norm, svd, Mat, NormOrder};
use crate::network::Network;
use crate::opnorm::{power_limit_iterates, Alpha};
use crate::par;
use crate::rng::derive;

/// Which map spectra and linearity are measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeasureLayer {
    /// Output of the last hidden layer, `φ^{L-1}`.
    #[default]
    LastHidden,
    /// The logits.
    Logits,
}

/// The network whose input-output map is measured. A network without hidden
/// layers is measured on its logits.
pub fn measure_map(net: &Network, layer: MeasureLayer) -> Network {
    match layer {
        MeasureLayer::LastHidden => net.hidden_map().unwrap_or_else(|| net.clone()),
        MeasureLayer::Logits => net.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumRecord {
    pub sample_id: usize,
    /// 1-based.
    pub rank: usize,
    pub singular_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentRecord {
    pub sample_id: usize,
    /// 1-based.
    pub rank: usize,
    /// Absolute cosine similarity.
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub sample_id: usize,
    pub p: NormOrder,
    pub q: NormOrder,
    pub eps: f64,
    /// Cosine between the attack's and the power method's `v_k`, per iteration.
    pub cosines: Vec<f64>,
    pub same_cell_throughout: bool,
    /// `‖f(x_k) − f(x)‖_q / ε` along the attack trace.
    pub sigmas_pga: Vec<f64>,
    /// `‖J v_k‖_q` along the power iteration.
    pub sigmas_power: Vec<f64>,
    /// `‖f(x*) − f(x)‖_q / ε`
    pub final_sigma_pga: f64,
    /// `‖J v_K‖_q`
    pub final_sigma_power: f64,
    /// `|‖f(x*) − f(x)‖_q − ε ‖J v_K‖_q|`, relative to the right-hand side.
    pub objective_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub w_hat: Mat,
    pub b_hat: Vec<f64>,
    /// Frobenius norm of the fit residual.
    pub residual_norm: f64,
    /// Whether every probe shared the activation pattern of the base point.
    pub all_in_cell: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyPoint {
    pub eps: f64,
    pub accuracy: f64,
    pub stderr: f64,
}

/// Mean and standard error (sample standard deviation over √n).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Fits `f(x') ≈ Ŵ x' + b̂` by least squares on `n_samples` Gaussian probes
/// `x' = x + noise_scale·ξ`, re-evaluating the network (and its activation
/// pattern) at every probe.
pub fn extract_jacobian_regression(
    net: &Network,
    x: &[f64],
    n_samples: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<RegressionFit> {
    use rand_distr::{Distribution, StandardNormal};
    check_dim(net.input_dim(), x.len())?;
    let n = x.len();
    if n_samples < n + 1 {
        return Err(Error::InvalidArgument(format!("need at least {} samples, got {n_samples}", n + 1)));
    }
    if noise_scale.is_nan() || noise_scale <= 0.0 {
        return Err(Error::InvalidArgument("noise_scale must be positive".into()));
    }
    let base = net.activation_pattern(x)?;
    let mut rng = crate::rng::rng(seed);
    let offsets: Vec<Vec<f64>> =
        (0..n_samples).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let outputs = par::map(&offsets, |xi| {
        let probe: Vec<f64> = x.iter().zip(xi).map(|(a, b)| a + noise_scale * b).collect();
        let trace = net.forward(&probe)?;
        Ok::<_, Error>((trace.logits, trace.pattern == base))
    });
    let d = net.output_dim();
    // Regress on unit-scale offsets (plus an intercept) so the system stays
    // well conditioned however small the noise is; then undo the scaling.
    let mut design = Mat::zeros(n_samples, n + 1);
    let mut targets = Mat::zeros(n_samples, d);
    let mut all_in_cell = true;
    for (i, (xi, out)) in offsets.iter().zip(outputs).enumerate() {
        let (logits, in_cell) = out?;
        all_in_cell &= in_cell;
        design.row_mut(i)[..n].copy_from_slice(xi);
        design.row_mut(i)[n] = 1.0;
        targets.row_mut(i).copy_from_slice(&logits);
    }
    let coef = least_squares(&design, &targets)?;
    let w_hat = Mat::from_fn(d, n, |r, c| coef[(c, r)] / noise_scale);
    let intercept: Vec<f64> = (0..d).map(|r| coef[(n, r)]).collect();
    let b_hat: Vec<f64> = intercept.iter().zip(w_hat.matvec(x)?).map(|(c, wx)| c - wx).collect();
    let fitted = design.matmul(&coef)?;
    let residual_norm = fitted.sub(&targets).frobenius();
    Ok(RegressionFit { w_hat, b_hat, residual_norm, all_in_cell })
}

/// Full descending singular spectrum of the Jacobian of `net` at `x`.
pub fn singular_spectrum(net: &Network, x: &[f64], sample_id: usize) -> Result<Vec<SpectrumRecord>> {
    let s = svd(&net.jacobian(x)?)?;
    Ok(s.singular_values
        .iter()
        .enumerate()
        .map(|(r, &singular_value)| SpectrumRecord { sample_id, rank: r + 1, singular_value })
        .collect())
}

/// `|cos(perturbation, v_r)|` for every right singular vector `v_r` of the
/// Jacobian at `x`.
pub fn alignment_curve(perturbation: &[f64], net: &Network, x: &[f64], sample_id: usize) -> Result<Vec<AlignmentRecord>> {
    check_dim(net.input_dim(), perturbation.len())?;
    if norm2(perturbation) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let s = svd(&net.jacobian(x)?)?;
    Ok((0..s.rank())
        .map(|r| AlignmentRecord {
            sample_id,
            rank: r + 1,
            cosine: cosine(perturbation, &s.right_vector(r)).unwrap_or(0.0).abs(),
        })
        .collect())
}

fn unit_direction(direction: &[f64]) -> Result<()> {
    if (norm2(direction) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("direction must have unit ℓ2 norm".into()));
    }
    Ok(())
}

/// `‖g(x + r d) − g(x) − J_g(x) r d‖₂` for each radius, where `g` is `net`.
pub fn linearity_deviation(net: &Network, x: &[f64], direction: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_dim(net.input_dim(), direction.len())?;
    unit_direction(direction)?;
    let base = net.eval(x)?;
    let jd = net.jvp(x, direction)?;
    radii
        .iter()
        .map(|&r| {
            let moved: Vec<f64> = x.iter().zip(direction).map(|(a, b)| a + r * b).collect();
            let out = net.eval(&moved)?;
            let dev: Vec<f64> = out.iter().zip(&base).zip(&jd).map(|((o, b), j)| o - (b + r * j)).collect();
            Ok((r, norm2(&dev)))
        })
        .collect()
}

/// Largest singular value of the Jacobian along `x + r d`.
pub fn top_sv_over_distance(net: &Network, x: &[f64], direction: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_dim(net.input_dim(), direction.len())?;
    unit_direction(direction)?;
    radii
        .iter()
        .map(|&r| {
            let moved: Vec<f64> = x.iter().zip(direction).map(|(a, b)| a + r * b).collect();
            Ok((r, svd(&net.jacobian(&moved)?)?.top()))
        })
        .collect()
}

/// Fraction of ReLUs whose state agrees at `base` and `base + z`.
pub fn shared_activation_fraction(net: &Network, base: &[f64], z: &[f64]) -> Result<f64> {
    check_dim(base.len(), z.len())?;
    let m = net.neuron_count();
    if m == 0 {
        return Ok(1.0);
    }
    let moved: Vec<f64> = base.iter().zip(z).map(|(a, b)| a + b).collect();
    let a = net.activation_pattern(base)?;
    let b = net.activation_pattern(&moved)?;
    Ok((m - a.hamming(&b)) as f64 / m as f64)
}

/// Mean (over bases) of the shared-activation fraction under `draws`
/// uniform perturbations from the ℓp ball of radius `eps`, with its standard
/// error across bases.
pub fn shared_activation_stats(
    net: &Network,
    bases: &[Vec<f64>],
    eps: f64,
    p: NormOrder,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let per_base = par::map_range(bases.len(), |i| {
        let mut rng = crate::rng::rng(derive(seed, i as u64));
        let zero = vec![0.0; bases[i].len()];
        let mut total = 0.0;
        for _ in 0..draws.max(1) {
            let z = sample_ball_with(&zero, eps, p, &mut rng)?;
            total += shared_activation_fraction(net, &bases[i], &z)?;
        }
        Ok::<_, Error>(total / draws.max(1) as f64)
    });
    let values = per_base.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(mean_stderr(&values))
}

/// Gradients of every ReLU pre-activation with respect to the input, with the
/// pattern at `x` frozen, and the pre-activation values: `(values, rows)`.
fn hidden_preactivation_jacobian(net: &Network, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let trace = net.forward(x)?;
    let mut values = Vec::new();
    let mut rows = Vec::new();
    let mut acc: Option<Mat> = None;
    for (idx, layer) in net.layers().iter().enumerate() {
        if !layer.relu {
            break;
        }
        let pre = match &acc {
            None => layer.weight.clone(),
            Some(prev) => layer.weight.matmul(prev)?,
        };
        for i in 0..pre.rows() {
            values.push(trace.pre_activations[idx][i]);
            rows.push(pre.row(i).to_vec());
        }
        let mut masked = pre;
        for (i, &z) in trace.pre_activations[idx].iter().enumerate() {
            if z < 0.0 {
                masked.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        acc = Some(masked);
    }
    Ok((values, rows))
}

/// Radius of the largest ℓp ball around `x` inside its ReLU cell,
/// `min_i |z_i| / ‖∇z_i‖_{p*}` over all pre-activations `z_i`.
pub fn in_cell_radius(net: &Network, x: &[f64], p: NormOrder) -> Result<f64> {
    let (values, rows) = hidden_preactivation_jacobian(net, x)?;
    let dual = holder_conjugate(p);
    Ok(values
        .iter()
        .zip(&rows)
        .map(|(z, g)| {
            let gn = p_norm(g, dual);
            if gn == 0.0 {
                f64::INFINITY
            } else {
                z.abs() / gn
            }
        })
        .fold(f64::INFINITY, f64::min))
}

/// Distance `t > 0` along `x + t·direction` to the first ReLU boundary
/// (infinite when none is crossed).
pub fn boundary_distance_along(net: &Network, x: &[f64], direction: &[f64]) -> Result<f64> {
    check_dim(net.input_dim(), direction.len())?;
    let (values, rows) = hidden_preactivation_jacobian(net, x)?;
    Ok(values
        .iter()
        .zip(&rows)
        .filter_map(|(z, g)| {
            let rate = dot(g, direction);
            let t = -z / rate;
            (rate != 0.0 && t > 0.0).then_some(t)
        })
        .fold(f64::INFINITY, f64::min))
}

/// Runs an infinite-step logit-ℓq attack and the (p,q) power-method limit
/// from the same start `v0` and compares their trajectories.
#[allow(clippy::too_many_arguments)]
pub fn verify_theorem1(
    net: &Network,
    x: &[f64],
    p: NormOrder,
    q: NormOrder,
    eps: f64,
    iters: usize,
    v0: &[f64],
    sample_id: usize,
) -> Result<EquivalenceReport> {
    check_dim(net.input_dim(), v0.len())?;
    if (p_norm(v0, p) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("v0 must have unit ℓp norm".into()));
    }
    let x0: Vec<f64> = x.iter().zip(v0).map(|(a, b)| a + eps * b).collect();
    let cfg = AttackConfig {
        alpha: Alpha::Infinity,
        loss: AdvLoss::LogitLq { q },
        init: AttackInit::Explicit(x0.clone()),
        ..AttackConfig::new(p, eps, iters)
    };
    let attack = pga_attack(net, x, 0, &cfg)?;
    let op = net.jacobian_operator(x)?;
    let power = power_limit_iterates(&op, v0, p, q, iters, false)?;

    let base = net.activation_pattern(x)?;
    let mut same_cell = net.activation_pattern(&x0)? == base;
    for step in &attack.trace {
        same_cell &= net.activation_pattern(&step.x)? == base;
    }
    let cosines: Vec<f64> =
        attack.trace.iter().zip(&power).map(|(a, b)| cosine(&a.v, &b.v).unwrap_or(0.0)).collect();
    let clean = net.eval(x)?;
    let gain = |z: &[f64]| -> Result<f64> {
        let diff: Vec<f64> = net.eval(z)?.iter().zip(&clean).map(|(a, b)| a - b).collect();
        Ok(p_norm(&diff, q))
    };
    let sigmas_pga = attack.trace.iter().map(|s| gain(&s.x).map(|g| g / eps)).collect::<Result<Vec<_>>>()?;
    let lhs = gain(&attack.x_star)?;
    let last = power.last().expect("iters ≥ 1");
    let rhs = eps * p_norm(&op.jvp(attack.trace.last().map_or(v0, |s| &s.v))?, q);
    Ok(EquivalenceReport {
        sample_id,
        p,
        q,
        eps,
        cosines,
        same_cell_throughout: same_cell && !attack.terminated_early,
        sigmas_pga,
        sigmas_power: power.iter().map(|s| s.sigma).collect(),
        final_sigma_pga: lhs / eps,
        final_sigma_power: last.sigma,
        objective_gap: (lhs - rhs).abs() / rhs.max(f64::MIN_POSITIVE),
    })
}

/// Robust accuracy over an ε grid. A sample counts as robust at ε only if it
/// is correctly classified after the attack at ε and at every smaller grid
/// value (a larger ball contains the smaller ones). Each sample uses the same
/// attack seed at every ε. Points come back in ascending ε.
pub fn robust_accuracy_curve(
    net: &Network,
    data: &Dataset,
    eps_grid: &[f64],
    template: &AttackConfig,
) -> Result<Vec<AccuracyPoint>> {
    if eps_grid.is_empty() {
        return Err(Error::InvalidArgument("empty ε grid".into()));
    }
    let mut grid = eps_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let per_sample = par::map_range(data.len(), |i| {
        let x = &data.inputs[i];
        let y = data.labels[i];
        let clean_ok = argmax(&net.eval(x)?) == y;
        let mut robust = Vec::with_capacity(grid.len());
        let mut still = clean_ok;
        for &eps in &grid {
            if still && eps > 0.0 {
                let cfg = AttackConfig { seed: derive(template.seed, i as u64), ..template.with_eps(eps) };
                still = argmax(&net.eval(&pga_attack(net, x, y, &cfg)?.x_star)?) == y;
            }
            robust.push(still);
        }
        Ok::<_, Error>(robust)
    });
    let rows = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    let n = data.len().max(1) as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let acc = rows.iter().filter(|r| r[j]).count() as f64 / n;
            AccuracyPoint { eps, accuracy: acc, stderr: (acc * (1.0 - acc) / n).sqrt() }
        })
        .collect())
}
