//! Projected gradient ascent attacks inside ℓp balls.
//!
//! Each step is written as a forward pass (loss direction on the logits), a
//! backward pass (`Jᵀ u` with the activation pattern of the current iterate)
//! and a dual normalization, followed by a step and a projection back onto
//! the ball. With an infinite step size the projection collapses to
//! `x_k = x + ε v_k`.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::{argmax, norm2};
use crate::linalg::{optimal_perturbation, p_norm, p_norm_gradient, project_ball, NormOrder};
use crate::loss::{cross_entropy, cross_entropy_grad};
use crate::network::Network;
use crate::opnorm::Alpha;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvLoss {
    /// Softmax cross-entropy at inverse temperature β.
    CrossEntropy { temperature: f64 },
    /// `‖f(x') − f(x)‖_q`, distance from the clean logits.
    LogitLq { q: NormOrder },
}

impl Default for AdvLoss {
    fn default() -> Self {
        AdvLoss::CrossEntropy { temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackInit {
    /// Start at the clean input.
    Clean,
    /// Start at a uniform sample from the ball.
    Uniform,
    /// Start at the given point (must lie in the ball).
    Explicit(Vec<f64>),
}

/// Which label an untargeted attack pushes away from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMode {
    #[default]
    True,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub p: NormOrder,
    pub eps: f64,
    pub alpha: Alpha,
    pub iterations: usize,
    pub loss: AdvLoss,
    pub targeted: Option<usize>,
    pub init: AttackInit,
    pub label_mode: LabelMode,
    /// Rescale the logit direction to unit ℓ2 norm before the backward pass.
    pub normalize_u: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Cross-entropy attack with `α = 2ε / iterations` and a uniform random start.
    pub fn new(p: NormOrder, eps: f64, iterations: usize) -> Self {
        Self {
            p,
            eps,
            alpha: Alpha::Finite(2.0 * eps / iterations.max(1) as f64),
            iterations,
            loss: AdvLoss::default(),
            targeted: None,
            init: AttackInit::Uniform,
            label_mode: LabelMode::True,
            normalize_u: true,
            seed: 0,
        }
    }

    /// Same attack at a different radius; a finite step size is rescaled to
    /// `2ε / iterations`.
    pub fn with_eps(&self, eps: f64) -> Self {
        let mut c = self.clone();
        c.eps = eps;
        if let Alpha::Finite(_) = c.alpha {
            c.alpha = Alpha::Finite(2.0 * eps / c.iterations.max(1) as f64);
        }
        c
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !self.p.is_standard() {
            return Err(Error::UnsupportedNorm(self.p));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("attack needs at least one iteration".into()));
        }
        if let Alpha::Finite(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {a}")));
            }
        }
        if let AdvLoss::CrossEntropy { temperature } = self.loss {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(Error::InvalidArgument("temperature must be positive".into()));
            }
        }
        if let AttackInit::Explicit(x0) = &self.init {
            check_dim(n, x0.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackStep {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    /// Attack objective at `x`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_start: Vec<f64>,
    pub x_star: Vec<f64>,
    pub trace: Vec<AttackStep>,
    pub success: bool,
    /// Activation-pattern changes between consecutive points of
    /// `[x_0, x_1, …, x_K]`.
    pub cells_crossed: usize,
    /// Set when a loss or backward direction vanished before the last step.
    pub terminated_early: bool,
}

impl AttackResult {
    pub fn perturbation(&self, x: &[f64]) -> Vec<f64> {
        self.x_star.iter().zip(x).map(|(a, b)| a - b).collect()
    }
}

/// Ascent direction of the attack loss with respect to the logits.
///
/// Untargeted cross-entropy gives `softmax(β z) − e_y`, targeted gives the
/// negation with the target class. `LogitLq` gives the dual vector of
/// `z − z_clean` and fails with `ZeroVector` when the two coincide.
pub fn logit_direction(
    loss: AdvLoss,
    y: usize,
    target: Option<usize>,
    logits_now: &[f64],
    logits_clean: &[f64],
) -> Result<Vec<f64>> {
    check_dim(logits_now.len(), logits_clean.len())?;
    let d = logits_now.len();
    if let Some(c) = target.into_iter().chain(std::iter::once(y)).find(|&c| c >= d) {
        return Err(Error::InvalidArgument(format!("class {c} out of range for {d} logits")));
    }
    match loss {
        AdvLoss::CrossEntropy { temperature } => Ok(match target {
            None => cross_entropy_grad(logits_now, y, temperature),
            Some(t) => cross_entropy_grad(logits_now, t, temperature).into_iter().map(|g| -g).collect(),
        }),
        AdvLoss::LogitLq { q } => {
            let diff: Vec<f64> = logits_now.iter().zip(logits_clean).map(|(a, b)| a - b).collect();
            p_norm_gradient(&diff, q)
        }
    }
}

fn objective(loss: AdvLoss, y: usize, target: Option<usize>, logits: &[f64], clean: &[f64]) -> f64 {
    match loss {
        AdvLoss::CrossEntropy { temperature } => match target {
            None => cross_entropy(logits, y, temperature),
            Some(t) => -cross_entropy(logits, t, temperature),
        },
        AdvLoss::LogitLq { q } => {
            let diff: Vec<f64> = logits.iter().zip(clean).map(|(a, b)| a - b).collect();
            p_norm(&diff, q)
        }
    }
}

/// Uniform sample from `{x : ‖x − center‖_p ≤ eps}`.
pub fn sample_ball_uniform(center: &[f64], eps: f64, p: NormOrder, seed: u64) -> Result<Vec<f64>> {
    let mut rng = crate::rng::rng(seed);
    sample_ball_with(center, eps, p, &mut rng)
}

pub(crate) fn sample_ball_with(center: &[f64], eps: f64, p: NormOrder, rng: &mut crate::rng::Rng) -> Result<Vec<f64>> {
    let n = center.len();
    let offset: Vec<f64> = match p {
        NormOrder::Infinity => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        NormOrder::Two => {
            let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let r = rng.random::<f64>().powf(1.0 / n as f64) / norm2(&g);
            g.into_iter().map(|x| x * r).collect()
        }
        NormOrder::One => {
            // n + 1 exponentials normalized to the simplex; the extra one is slack.
            let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            e[..n]
                .iter()
                .map(|&x| if rng.random_bool(0.5) { x / total } else { -x / total })
                .collect()
        }
        NormOrder::Finite(_) => return Err(Error::UnsupportedNorm(p)),
    };
    Ok(center.iter().zip(offset).map(|(c, o)| c + eps * o).collect())
}

/// Projected gradient ascent from `x` with label `y`.
pub fn pga_attack(net: &Network, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    check_dim(net.input_dim(), x.len())?;
    cfg.validate(x.len())?;
    let clean = net.forward(x)?;
    let label = match cfg.label_mode {
        LabelMode::True => y,
        LabelMode::Predicted => argmax(&clean.logits),
    };
    // LogitLq has a zero gradient at the clean point, so it always starts randomly
    // unless the caller pins the start.
    let init = match (&cfg.init, cfg.loss) {
        (AttackInit::Clean, AdvLoss::LogitLq { .. }) => &AttackInit::Uniform,
        (init, _) => init,
    };
    let x_start = match init {
        AttackInit::Clean => x.to_vec(),
        AttackInit::Uniform => sample_ball_uniform(x, cfg.eps, cfg.p, crate::rng::derive(cfg.seed, 0xA77))?,
        AttackInit::Explicit(x0) => x0.clone(),
    };

    let mut current = x_start.clone();
    let mut current_trace = net.forward(&current)?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut cells_crossed = 0;
    let mut terminated_early = false;
    for _ in 0..cfg.iterations {
        let dir = match logit_direction(cfg.loss, label, cfg.targeted, &current_trace.logits, &clean.logits) {
            Ok(d) => d,
            Err(Error::ZeroVector) => {
                terminated_early = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let u = if cfg.normalize_u {
            let n = norm2(&dir);
            if n == 0.0 {
                terminated_early = true;
                break;
            }
            dir.iter().map(|g| g / n).collect()
        } else {
            dir
        };
        let op = crate::network::JacobianOperator::from_trace(net, &current_trace);
        let v_raw = op.vjp(&u)?;
        let v = match optimal_perturbation(&v_raw, cfg.p) {
            Ok(v) => v,
            Err(Error::ZeroVector) => {
                terminated_early = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let next = match cfg.alpha {
            Alpha::Infinity => x.iter().zip(&v).map(|(a, b)| a + cfg.eps * b).collect(),
            Alpha::Finite(alpha) => {
                let stepped: Vec<f64> = current.iter().zip(&v).map(|(a, b)| a + alpha * b).collect();
                project_ball(&stepped, x, cfg.eps, cfg.p)?
            }
        };
        let next_trace = net.forward(&next)?;
        if next_trace.pattern != current_trace.pattern {
            cells_crossed += 1;
        }
        let loss = objective(cfg.loss, label, cfg.targeted, &next_trace.logits, &clean.logits);
        trace.push(AttackStep { v, u, x: next.clone(), loss });
        current = next;
        current_trace = next_trace;
    }

    let pred = argmax(&current_trace.logits);
    let success = !terminated_early
        && match cfg.targeted {
            Some(t) => pred == t,
            None => pred != y,
        };
    Ok(AttackResult { x_start, x_star: current, trace, success, cells_crossed, terminated_early })
}

#[cfg(test)]
mod tests;
