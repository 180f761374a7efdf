//! Operator norms `‖A‖_{p→q} = max_{‖v‖_p ≤ 1} ‖A v‖_q` of matrices and of
//! network Jacobians.
//!
//! Every iteration here works through a [`LinearOperator`], so the same code
//! runs on dense matrices and on Jacobians that are only available as
//! forward/backward products.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::{dot, norm2};
use crate::linalg::{
    optimal_perturbation, p_norm, p_norm_gradient, project_sphere, svd, LinearOperator, Mat, NormOrder,
};
use crate::network::Network;
use crate::par;

/// Step size of a projected-gradient iteration; `Infinity` selects the
/// power-method limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    Infinity,
}

impl Alpha {
    pub fn is_infinite(self) -> bool {
        matches!(self, Alpha::Infinity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIterState {
    /// Co-domain direction, length `d`.
    pub u: Vec<f64>,
    /// Domain direction, length `n`.
    pub v: Vec<f64>,
    /// Last forward product `J v_{k-1}` before normalization.
    pub u_raw: Vec<f64>,
    /// Last backward product `Jᵀ u_k` before normalization.
    pub v_raw: Vec<f64>,
    pub sigma: f64,
    pub iteration: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNormConfig {
    pub p: NormOrder,
    pub q: NormOrder,
    pub iterations: usize,
    pub alpha: Alpha,
    pub seed: u64,
    /// Early-stopping threshold on the relative change of sigma, used only by
    /// [`estimate_opnorm`].
    pub tolerance: f64,
    /// Drop the `u` normalization, i.e. ascend `‖J v‖_q^q` instead of `‖J v‖_q`.
    pub q_power: bool,
    pub restarts: usize,
}

impl Default for OpNormConfig {
    fn default() -> Self {
        Self {
            p: NormOrder::Two,
            q: NormOrder::Two,
            iterations: 10,
            alpha: Alpha::Infinity,
            seed: 0,
            tolerance: 1e-9,
            q_power: false,
            restarts: 8,
        }
    }
}

impl OpNormConfig {
    pub fn new(p: NormOrder, q: NormOrder) -> Self {
        Self { p, q, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        for n in [self.p, self.q] {
            if !n.is_standard() {
                return Err(Error::UnsupportedNorm(n));
            }
        }
        if self.q_power && self.q == NormOrder::Infinity {
            return Err(Error::UnsupportedNorm(self.q));
        }
        if let Alpha::Finite(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// Random starting direction with `‖v‖_p = 1`: a normalized Gaussian for
/// `p = 2`, normalized signed exponentials otherwise.
pub fn random_start(n: usize, p: NormOrder, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::rng(seed);
    let v: Vec<f64> = match p {
        NormOrder::Two => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        _ => (0..n)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                if rng.random_bool(0.5) {
                    e
                } else {
                    -e
                }
            })
            .collect(),
    };
    let norm = p_norm(&v, p);
    v.into_iter().map(|x| x / norm).collect()
}

/// Dual normalization of the forward product: `sign(ũ)⊙|ũ|^{q-1}/‖ũ‖_q^{q-1}`,
/// or without the denominator when `q_power` is set.
fn dual_u(u_raw: &[f64], q: NormOrder, q_power: bool, iteration: usize) -> Result<Vec<f64>> {
    let dual = p_norm_gradient(u_raw, q).map_err(|_| Error::ZeroJacobianProduct { iteration })?;
    if !q_power {
        return Ok(dual);
    }
    Ok(match q {
        NormOrder::One => dual,
        NormOrder::Two => u_raw.to_vec(),
        NormOrder::Finite(e) => u_raw.iter().map(|x| x.signum() * x.abs().powf(e - 1.0)).collect(),
        NormOrder::Infinity => return Err(Error::UnsupportedNorm(q)),
    })
}

/// One amortized step of the global power method on a weight matrix:
/// `u ← Wv/‖Wv‖`, `v ← Wᵀu/‖Wᵀu‖`, `σ ← uᵀWv`.
pub fn global_snr_power_step(weight: &Mat, state: &PowerIterState) -> Result<PowerIterState> {
    check_dim(weight.cols(), state.v.len())?;
    let u_raw = weight.matvec(&state.v)?;
    let un = norm2(&u_raw);
    if un == 0.0 {
        return Err(Error::ZeroVector);
    }
    let u: Vec<f64> = u_raw.iter().map(|x| x / un).collect();
    let v_raw = weight.matvec_t(&u)?;
    let vn = norm2(&v_raw);
    if vn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let v: Vec<f64> = v_raw.iter().map(|x| x / vn).collect();
    let sigma = dot(&u, &weight.matvec(&v)?);
    let converged = (sigma - state.sigma).abs() <= 1e-12 * sigma.max(f64::MIN_POSITIVE);
    Ok(PowerIterState { u, v, u_raw, v_raw, sigma, iteration: state.iteration + 1, converged })
}

/// Fresh state for [`global_snr_power_step`] with a random unit `v`.
pub fn global_snr_init(weight: &Mat, seed: u64) -> PowerIterState {
    PowerIterState {
        u: vec![0.0; weight.rows()],
        v: random_start(weight.cols(), NormOrder::Two, seed),
        u_raw: Vec::new(),
        v_raw: Vec::new(),
        sigma: 0.0,
        iteration: 0,
        converged: false,
    }
}

/// Iterates of the power-method limit, one state per iteration, each with
/// `sigma = ‖J v_k‖_q`. With `p = q = 2` these are the classical power-method
/// updates.
pub fn power_limit_iterates<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    p: NormOrder,
    q: NormOrder,
    iterations: usize,
    q_power: bool,
) -> Result<Vec<PowerIterState>> {
    check_dim(op.input_dim(), v0.len())?;
    let mut states = Vec::with_capacity(iterations);
    let mut v = v0.to_vec();
    let mut prev_sigma = f64::NAN;
    for k in 1..=iterations {
        let u_raw = op.apply(&v)?;
        let u = dual_u(&u_raw, q, q_power, k)?;
        let v_raw = op.apply_transpose(&u)?;
        v = optimal_perturbation(&v_raw, p).map_err(|_| Error::ZeroJacobianProduct { iteration: k })?;
        let sigma = p_norm(&op.apply(&v)?, q);
        let converged = (sigma - prev_sigma).abs() <= 1e-12 * sigma;
        prev_sigma = sigma;
        states.push(PowerIterState { u, v: v.clone(), u_raw, v_raw, sigma, iteration: k, converged });
    }
    Ok(states)
}

/// Final state of [`power_limit_iterates`].
pub fn power_limit<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    p: NormOrder,
    q: NormOrder,
    iterations: usize,
    q_power: bool,
) -> Result<PowerIterState> {
    let mut states = power_limit_iterates(op, v0, p, q, iterations, q_power)?;
    Ok(states.pop().expect("iterations ≥ 1"))
}

/// Finite-step projected gradient ascent on `‖J v‖_q` over the unit ℓ2
/// sphere: `v_k = Π(v_{k-1} + α Jᵀu_k)`.
pub fn pga_iterates<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    q: NormOrder,
    alpha: f64,
    iterations: usize,
    q_power: bool,
) -> Result<Vec<PowerIterState>> {
    check_dim(op.input_dim(), v0.len())?;
    let mut states = Vec::with_capacity(iterations);
    let mut v = v0.to_vec();
    let mut prev_sigma = f64::NAN;
    for k in 1..=iterations {
        let u_raw = op.apply(&v)?;
        let u = dual_u(&u_raw, q, q_power, k)?;
        let v_raw = op.apply_transpose(&u)?;
        let stepped: Vec<f64> = v.iter().zip(&v_raw).map(|(a, b)| a + alpha * b).collect();
        v = project_sphere(&stepped, NormOrder::Two).map_err(|_| Error::ZeroJacobianProduct { iteration: k })?;
        let sigma = p_norm(&op.apply(&v)?, q);
        let converged = (sigma - prev_sigma).abs() <= 1e-12 * sigma;
        prev_sigma = sigma;
        states.push(PowerIterState { u, v: v.clone(), u_raw, v_raw, sigma, iteration: k, converged });
    }
    Ok(states)
}

/// (2,2) power method on an operator, stopping once sigma changes by less
/// than `tolerance` relative, or after `max_iterations`.
pub fn top_singular<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    max_iterations: usize,
    tolerance: f64,
) -> Result<PowerIterState> {
    run_until_converged(op, v0, NormOrder::Two, NormOrder::Two, max_iterations, tolerance, false)
}

fn run_until_converged<A: LinearOperator + ?Sized>(
    op: &A,
    v0: &[f64],
    p: NormOrder,
    q: NormOrder,
    max_iterations: usize,
    tolerance: f64,
    q_power: bool,
) -> Result<PowerIterState> {
    check_dim(op.input_dim(), v0.len())?;
    let mut state = None::<PowerIterState>;
    let mut v = v0.to_vec();
    for k in 1..=max_iterations.max(1) {
        let u_raw = op.apply(&v)?;
        let u = dual_u(&u_raw, q, q_power, k)?;
        let v_raw = op.apply_transpose(&u)?;
        v = optimal_perturbation(&v_raw, p).map_err(|_| Error::ZeroJacobianProduct { iteration: k })?;
        let sigma = p_norm(&op.apply(&v)?, q);
        let converged = state.as_ref().is_some_and(|s| (sigma - s.sigma).abs() <= tolerance * sigma);
        state = Some(PowerIterState { u, v: v.clone(), u_raw, v_raw, sigma, iteration: k, converged });
        if converged {
            break;
        }
    }
    Ok(state.expect("at least one iteration"))
}

/// Best of `cfg.restarts` power-limit runs from random starts, each run
/// stopping early at `cfg.tolerance`. Restarts run in parallel; ties keep the
/// lowest restart index.
pub fn estimate_opnorm<A: LinearOperator + Sync + ?Sized>(op: &A, cfg: &OpNormConfig) -> Result<PowerIterState> {
    cfg.validate()?;
    let n = op.input_dim();
    let runs = par::map_range(cfg.restarts.max(1), |r| {
        let v0 = random_start(n, cfg.p, crate::rng::derive(cfg.seed, r as u64));
        run_until_converged(op, &v0, cfg.p, cfg.q, cfg.iterations, cfg.tolerance, cfg.q_power)
    });
    let mut best: Option<PowerIterState> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.sigma > b.sigma) {
                    best = Some(s);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one restart"),
    }
}

/// Data-dependent spectral norm of `J_f(x)`: exactly `cfg.iterations` rounds
/// of `u ← Jv/‖Jv‖₂`, `v ← Jᵀu/‖Jᵀu‖₂`, with `σ = uᵀ J v`. The starting
/// vector comes from `cfg.seed`.
pub fn dd_spectral_power(net: &Network, x: &[f64], cfg: &OpNormConfig) -> Result<PowerIterState> {
    if cfg.p != NormOrder::Two || cfg.q != NormOrder::Two {
        return Err(Error::InvalidArgument(format!(
            "spectral power method needs p = q = 2, got ({}, {})",
            cfg.p, cfg.q
        )));
    }
    let v0 = random_start(net.input_dim(), NormOrder::Two, cfg.seed);
    dd_spectral_power_from(net, x, &v0, cfg.iterations)
}

/// [`dd_spectral_power`] from an explicit unit starting vector.
pub fn dd_spectral_power_from(net: &Network, x: &[f64], v0: &[f64], iterations: usize) -> Result<PowerIterState> {
    let op = net.jacobian_operator(x)?;
    let mut state = power_limit(&op, v0, NormOrder::Two, NormOrder::Two, iterations.max(1), false)?;
    state.sigma = dot(&state.u, &op.jvp(&state.v)?);
    Ok(state)
}

/// Finite-α operator-norm iteration at `x` (ℓ2 domain only).
pub fn opnorm_pga_iteration(net: &Network, x: &[f64], cfg: &OpNormConfig, v0: &[f64]) -> Result<PowerIterState> {
    cfg.validate()?;
    let alpha = match cfg.alpha {
        Alpha::Finite(a) => a,
        Alpha::Infinity => return opnorm_power_limit(net, x, cfg, v0),
    };
    if cfg.p != NormOrder::Two {
        return Err(Error::UnsupportedNorm(cfg.p));
    }
    let op = net.jacobian_operator(x)?;
    let mut states = pga_iterates(&op, v0, cfg.q, alpha, cfg.iterations, cfg.q_power)?;
    Ok(states.pop().expect("iterations ≥ 1"))
}

/// Power-method limit of the (p,q) iteration on `J_f(x)` from `v0`.
pub fn opnorm_power_limit(net: &Network, x: &[f64], cfg: &OpNormConfig, v0: &[f64]) -> Result<PowerIterState> {
    cfg.validate()?;
    let op = net.jacobian_operator(x)?;
    power_limit(&op, v0, cfg.p, cfg.q, cfg.iterations, cfg.q_power)
}

/// Exact `‖M‖_{p→q}` for the tractable combinations.
pub fn closed_form_opnorm(m: &Mat, p: NormOrder, q: NormOrder) -> Result<f64> {
    use NormOrder::*;
    for n in [p, q] {
        if !n.is_standard() {
            return Err(Error::UnsupportedNorm(n));
        }
    }
    let max_col = |norm: NormOrder| (0..m.cols()).map(|j| p_norm(&m.col(j), norm)).fold(0.0, f64::max);
    let max_row = |norm: NormOrder| (0..m.rows()).map(|i| p_norm(m.row(i), norm)).fold(0.0, f64::max);
    match (p, q) {
        (One, q) => Ok(max_col(q)),
        (Two, Two) => Ok(svd(m)?.top()),
        (Two, Infinity) => Ok(max_row(Two)),
        (Infinity, Infinity) => Ok(max_row(One)),
        _ => Err(Error::NpHardCombination { p, q }),
    }
}

/// True when the top two singular values are too close for the power method
/// to single out a direction (`σ₁ − σ₂ < 1e-8 σ₁`).
pub fn top_singular_degenerate(singular_values: &[f64]) -> bool {
    match singular_values {
        [s1, s2, ..] => s1 - s2 < 1e-8 * s1,
        _ => false,
    }
}

#[cfg(test)]
mod tests;
