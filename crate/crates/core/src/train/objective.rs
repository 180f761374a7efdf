//! Training objectives and their parameter gradients.
//!
//! Every regularizer is an inner maximization (an attack or a power
//! iteration) followed by a smooth function of the parameters. Gradients hold
//! the inner maximizer fixed, which is exact at a converged maximizer by
//! first-order optimality. The two stages are exposed separately so that
//! gradients can be checked against finite differences with the maximizer
//! frozen.

use crate::attack::{pga_attack, AdvLoss, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::vector::dot;
use crate::linalg::{p_norm, p_norm_gradient, Mat, NormOrder};
use crate::loss::{cross_entropy, cross_entropy_grad};
use crate::network::{Network, ParamGrads};
use crate::opnorm::{
    dd_spectral_power_from, global_snr_init, global_snr_power_step, power_limit, random_start, PowerIterState,
};
use crate::par;
use crate::rng::derive2;

const ATTACK_STREAM: u64 = 1;
const POWER_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialParams {
    pub attack: AttackConfig,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrVariant {
    /// `(λ/2) σ(J_x)²`
    SigmaSquared,
    /// `(λ/2) ‖f(x + ε v) − f(x)‖₂²`
    SumOfSquares { eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDepSnrParams {
    pub weight: f64,
    pub variant: SnrVariant,
    pub power_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Standard,
    Adversarial(AdversarialParams),
    /// `(λ/2) Σ_ℓ σ(W^ℓ)²` with per-layer power iterations amortized across steps.
    GlobalSnr { weight: f64, power_iters: usize },
    DataDepSnr(DataDepSnrParams),
    /// `λ ‖J_x‖_{p,q}`, or `(λ/q) ‖J_x‖_{p,q}^q` with `use_q_power`.
    DataDepOnr { weight: f64, p: NormOrder, q: NormOrder, iters: usize, use_q_power: bool },
    /// `(1 − t)·Adversarial + t·DataDepSnr`.
    Interpolated { t: f64, at: AdversarialParams, snr: DataDepSnrParams },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |w: f64, what: &str| {
            if w >= 0.0 && w.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} weight must be finite and >= 0, got {w}")))
            }
        };
        match self {
            Objective::Standard => Ok(()),
            Objective::Adversarial(a) => nonneg(a.weight, "adversarial"),
            Objective::GlobalSnr { weight, .. } => nonneg(*weight, "global snr"),
            Objective::DataDepSnr(s) => nonneg(s.weight, "snr"),
            Objective::DataDepOnr { weight, p, q, use_q_power, .. } => {
                nonneg(*weight, "onr")?;
                for n in [*p, *q] {
                    if !n.is_standard() {
                        return Err(Error::UnsupportedNorm(n));
                    }
                }
                if *use_q_power && *q == NormOrder::Infinity {
                    return Err(Error::UnsupportedNorm(*q));
                }
                Ok(())
            }
            Objective::Interpolated { t, at, snr } => {
                if !(0.0..=1.0).contains(t) {
                    return Err(Error::InvalidArgument(format!("interpolation t must lie in [0, 1], got {t}")));
                }
                nonneg(at.weight, "adversarial")?;
                nonneg(snr.weight, "snr")
            }
        }
    }
}

/// Persisted per-layer power-iteration vectors for the global regularizer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalSnrState {
    pub layers: Vec<PowerIterState>,
}

impl GlobalSnrState {
    pub fn new(net: &Network, seed: u64) -> Self {
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| global_snr_init(&l.weight, crate::rng::derive(seed, i as u64)))
            .collect();
        Self { layers }
    }

    /// Advances every layer by `steps` power iterations.
    pub fn advance(&mut self, net: &Network, steps: usize) -> Result<()> {
        if self.layers.len() != net.layers().len() {
            *self = Self::new(net, 0);
        }
        for (state, layer) in self.layers.iter_mut().zip(net.layers()) {
            for _ in 0..steps {
                *state = global_snr_power_step(&layer.weight, state)?;
            }
        }
        Ok(())
    }
}

/// Inner maximizers for one example.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InnerSolution {
    /// Adversarial input `x*`.
    pub adversarial: Option<Vec<f64>>,
    /// Left/right singular vector estimates of `J_x`.
    pub spectral: Option<(Vec<f64>, Vec<f64>)>,
    /// Maximizing direction of the (p,q) operator norm.
    pub operator: Option<Vec<f64>>,
}

fn adv_weight(obj: &Objective) -> Option<(&AdversarialParams, f64)> {
    match obj {
        Objective::Adversarial(a) => Some((a, 1.0)),
        Objective::Interpolated { t, at, .. } if *t < 1.0 => Some((at, 1.0 - t)),
        _ => None,
    }
}

fn snr_weight(obj: &Objective) -> Option<(&DataDepSnrParams, f64)> {
    match obj {
        Objective::DataDepSnr(s) => Some((s, 1.0)),
        Objective::Interpolated { t, snr, .. } if *t > 0.0 => Some((snr, *t)),
        _ => None,
    }
}

/// Runs the inner maximizations the objective needs at `(x, y)`.
pub fn solve_inner(net: &Network, x: &[f64], y: usize, obj: &Objective, seed: u64) -> Result<InnerSolution> {
    let mut inner = InnerSolution::default();
    if let Some((at, _)) = adv_weight(obj) {
        let cfg = AttackConfig { seed: derive2(seed, ATTACK_STREAM, 0), ..at.attack.clone() };
        inner.adversarial = Some(pga_attack(net, x, y, &cfg)?.x_star);
    }
    if let Some((snr, _)) = snr_weight(obj) {
        let v0 = random_start(net.input_dim(), NormOrder::Two, derive2(seed, POWER_STREAM, 0));
        let s = dd_spectral_power_from(net, x, &v0, snr.power_iters.max(1))?;
        inner.spectral = Some((s.u, s.v));
    }
    if let Objective::DataDepOnr { p, q, iters, use_q_power, .. } = obj {
        let v0 = random_start(net.input_dim(), *p, derive2(seed, POWER_STREAM, 0));
        let op = net.jacobian_operator(x)?;
        inner.operator = Some(power_limit(&op, &v0, *p, *q, (*iters).max(1), *use_q_power)?.v);
    }
    Ok(inner)
}

fn adv_loss_and_grad(loss: AdvLoss, y: usize, z_adv: &[f64], z_clean: &[f64]) -> (f64, Vec<f64>) {
    match loss {
        AdvLoss::CrossEntropy { temperature } => {
            (cross_entropy(z_adv, y, temperature), cross_entropy_grad(z_adv, y, temperature))
        }
        AdvLoss::LogitLq { q } => {
            let diff: Vec<f64> = z_adv.iter().zip(z_clean).map(|(a, b)| a - b).collect();
            let g = p_norm_gradient(&diff, q).unwrap_or_else(|_| vec![0.0; diff.len()]);
            (p_norm(&diff, q), g)
        }
    }
}

/// Per-example objective value and parameter gradient with the inner
/// maximizers frozen. The global spectral term is not included.
pub fn example_value_and_grads(
    net: &Network,
    x: &[f64],
    y: usize,
    obj: &Objective,
    inner: &InnerSolution,
) -> Result<(f64, ParamGrads)> {
    let z = net.eval(x)?;
    let mut value = cross_entropy(&z, y, 1.0);
    let mut grads = net.param_gradients(x, &cross_entropy_grad(&z, y, 1.0))?;

    if let Some((at, w)) = adv_weight(obj) {
        let x_adv = inner.adversarial.as_ref().ok_or_else(|| missing("adversarial input"))?;
        let z_adv = net.eval(x_adv)?;
        let (l, g) = adv_loss_and_grad(at.attack.loss, y, &z_adv, &z);
        let scale = w * at.weight;
        if scale != 0.0 {
            value += scale * l;
            grads.add_scaled(scale, &net.param_gradients(x_adv, &g)?);
            if let AdvLoss::LogitLq { .. } = at.attack.loss {
                grads.add_scaled(-scale, &net.param_gradients(x, &g)?);
            }
        }
    }

    if let Some((snr, w)) = snr_weight(obj) {
        let (u, v) = inner.spectral.as_ref().ok_or_else(|| missing("singular vectors"))?;
        let scale = w * snr.weight;
        if scale != 0.0 {
            match snr.variant {
                SnrVariant::SigmaSquared => {
                    let sigma = dot(u, &net.jvp(x, v)?);
                    value += scale * 0.5 * sigma * sigma;
                    grads.add_scaled(scale * sigma, &net.jacobian_bilinear_gradients(x, v, u)?);
                }
                SnrVariant::SumOfSquares { eps } => {
                    let x_shift: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
                    let r: Vec<f64> = net.eval(&x_shift)?.iter().zip(&z).map(|(a, b)| a - b).collect();
                    value += scale * 0.5 * dot(&r, &r);
                    grads.add_scaled(scale, &net.param_gradients(&x_shift, &r)?);
                    grads.add_scaled(-scale, &net.param_gradients(x, &r)?);
                }
            }
        }
    }

    if let Objective::DataDepOnr { weight, q, use_q_power, .. } = obj {
        let v = inner.operator.as_ref().ok_or_else(|| missing("operator direction"))?;
        if *weight != 0.0 {
            let jv = net.jvp(x, v)?;
            let (term, u) = if *use_q_power {
                let e = q.exponent();
                let u: Vec<f64> = jv.iter().map(|a| a.signum() * a.abs().powf(e - 1.0)).collect();
                (p_norm(&jv, *q).powf(e) / e, u)
            } else {
                let u = p_norm_gradient(&jv, *q).unwrap_or_else(|_| vec![0.0; jv.len()]);
                (p_norm(&jv, *q), u)
            };
            value += weight * term;
            grads.add_scaled(*weight, &net.jacobian_bilinear_gradients(x, v, &u)?);
        }
    }
    Ok((value, grads))
}

fn missing(what: &str) -> Error {
    Error::InvalidArgument(format!("inner solution lacks {what} required by the objective"))
}

/// `(λ/2) Σ_ℓ (u_ℓᵀ W_ℓ v_ℓ)²` and its gradient `λ σ_ℓ u_ℓ v_ℓᵀ`, with the
/// vectors frozen.
pub fn global_snr_term(net: &Network, weight: f64, state: &GlobalSnrState) -> Result<(f64, ParamGrads)> {
    let mut grads = ParamGrads::zeros_like(net);
    let mut value = 0.0;
    for ((layer, s), g) in net.layers().iter().zip(&state.layers).zip(&mut grads.layers) {
        let sigma = dot(&s.u, &layer.weight.matvec(&s.v)?);
        value += 0.5 * weight * sigma * sigma;
        g.weight = Mat::outer(&s.u, &s.v);
        g.weight.scale(weight * sigma);
    }
    Ok((value, grads))
}

/// Batch objective with inner maximizers supplied by the caller. Examples
/// whose entry in `inner` is `None` are skipped. Returns the mean value, the
/// mean gradient and the number of examples used.
pub fn evaluate_frozen(
    net: &Network,
    batch: &Dataset,
    obj: &Objective,
    inner: &[Option<InnerSolution>],
    global: Option<&GlobalSnrState>,
) -> Result<(f64, ParamGrads, usize)> {
    let idx: Vec<usize> = (0..batch.len()).filter(|&i| inner[i].is_some()).collect();
    let per_example = par::map(&idx, |&i| {
        example_value_and_grads(net, &batch.inputs[i], batch.labels[i], obj, inner[i].as_ref().expect("filtered"))
    });
    let mut value = 0.0;
    let mut grads = ParamGrads::zeros_like(net);
    let used = idx.len();
    let inv = 1.0 / used.max(1) as f64;
    for r in per_example {
        let (v, g) = r?;
        value += v * inv;
        grads.add_scaled(inv, &g);
    }
    if let (Objective::GlobalSnr { weight, .. }, Some(state)) = (obj, global) {
        let (v, g) = global_snr_term(net, *weight, state)?;
        value += v;
        grads.add_scaled(1.0, &g);
    }
    Ok((value, grads, used))
}

/// Solves the inner problems for every example of a batch. Example `i` uses
/// the seed `derive(seed, i)`; failures are logged and yield `None`.
pub fn solve_inner_batch(net: &Network, batch: &Dataset, obj: &Objective, seed: u64) -> Vec<Option<InnerSolution>> {
    par::map_range(batch.len(), |i| {
        match solve_inner(net, &batch.inputs[i], batch.labels[i], obj, crate::rng::derive(seed, i as u64)) {
            Ok(s) => Some(s),
            Err(e) => {
                tracing::warn!(example = i, error = %e, "skipping example");
                None
            }
        }
    })
}

/// Full objective on a batch: solves the inner problems, advances the global
/// power iterations when the objective needs them, and returns the mean value
/// and gradient.
pub fn objective_value_and_grads(
    net: &Network,
    batch: &Dataset,
    obj: &Objective,
    state: &mut GlobalSnrState,
    seed: u64,
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    obj.validate()?;
    let inner = solve_inner_batch(net, batch, obj, seed);
    let global = if let Objective::GlobalSnr { power_iters, .. } = obj {
        state.advance(net, (*power_iters).max(1))?;
        Some(&*state)
    } else {
        None
    };
    let (value, grads, _) = evaluate_frozen(net, batch, obj, &inner, global)?;
    Ok((value, grads))
}
