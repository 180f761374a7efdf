//! Mini-batch momentum-SGD training under the standard, adversarial and
//! operator-norm regularized objectives.

mod objective;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::network::{Network, ParamGrads};
use crate::par;
use crate::rng::{derive, derive2};

pub use objective::{
    evaluate_frozen, example_value_and_grads, global_snr_term, objective_value_and_grads, solve_inner,
    solve_inner_batch, AdversarialParams, DataDepSnrParams, GlobalSnrState, InnerSolution, Objective, SnrVariant,
};

pub use crate::loss::{cross_entropy, cross_entropy_grad, softmax};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, learning_rate: 0.05, momentum: 0.9, seed: 0, objective: Objective::Standard }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        self.objective.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean batch objective over the epoch; for epoch 0 the objective of the
    /// initial network on the whole training set.
    pub objective: f64,
    /// Training accuracy after the epoch.
    pub clean_acc: f64,
    /// Mean top singular value of the logit Jacobian over the probe set.
    pub probe_sigma_mean: f64,
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let hits = par::map_range(data.len(), |i| net.predict(&data.inputs[i]).map(|p| p == data.labels[i]));
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean top singular value of `J_f(x)` over `data`.
pub fn mean_top_sigma(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let sigmas = par::map(&data.inputs, |x| svd(&net.jacobian(x)?).map(|s| s.top()));
    let mut total = 0.0;
    for s in sigmas {
        total += s?;
    }
    Ok(total / data.len() as f64)
}

fn batch_of(data: &Dataset, idx: &[usize]) -> Dataset {
    Dataset {
        inputs: idx.iter().map(|&i| data.inputs[i].clone()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
        classes: data.classes,
    }
}

/// Trains a copy of `net` and returns it with one metrics row per epoch
/// (plus the initial row at epoch 0).
pub fn train(net: &Network, data: &Dataset, probe: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut net = net.clone();
    let mut global = GlobalSnrState::new(&net, derive(cfg.seed, u64::MAX));
    let mut velocity = ParamGrads::zeros_like(&net);

    let initial = {
        let mut scratch = global.clone();
        objective_value_and_grads(&net, data, &cfg.objective, &mut scratch, derive(cfg.seed, u64::MAX - 1))?.0
    };
    let mut metrics = vec![EpochMetrics {
        epoch: 0,
        objective: initial,
        clean_acc: accuracy(&net, data)?,
        probe_sigma_mean: mean_top_sigma(&net, probe)?,
    }];

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_counter = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut crate::rng::rng(derive(cfg.seed, epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = batch_of(data, chunk);
            let seed = derive2(cfg.seed, epoch as u64, b as u64);
            let (value, grads) = objective_value_and_grads(&net, &batch, &cfg.objective, &mut global, seed)?;
            if !value.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_counter });
            }
            velocity.scale(cfg.momentum);
            velocity.add_scaled(1.0, &grads);
            net.apply_update(cfg.learning_rate, &velocity);
            if !net.layers().iter().all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite())) {
                return Err(Error::NonFiniteLoss { batch: batch_counter });
            }
            total += value;
            batches += 1;
            batch_counter += 1;
        }
        let row = EpochMetrics {
            epoch,
            objective: total / batches as f64,
            clean_acc: accuracy(&net, data)?,
            // An overflowing Jacobian means the parameters have diverged.
            probe_sigma_mean: mean_top_sigma(&net, probe).map_err(|e| match e {
                Error::InvalidArgument(_) => Error::NonFiniteLoss { batch: batch_counter - 1 },
                e => e,
            })?,
        };
        tracing::debug!(epoch, objective = row.objective, clean_acc = row.clean_acc, "epoch done");
        metrics.push(row);
    }
    Ok((net, metrics))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightChoice {
    pub weight: f64,
    pub accuracy: f64,
    /// Every evaluated `(weight, accuracy)` pair, in grid order.
    pub sweep: Vec<(f64, f64)>,
}

/// Picks the largest regularization weight whose validation accuracy is
/// within `tolerance` of `target`; falls back to the closest accuracy when
/// none qualifies.
pub fn select_weight<F>(grid: &[f64], target: f64, tolerance: f64, evaluate: F) -> Result<WeightChoice>
where
    F: Fn(f64) -> Result<f64> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty weight grid".into()));
    }
    let results = par::map(grid, |&w| evaluate(w).map(|a| (w, a)));
    let sweep = results.into_iter().collect::<Result<Vec<_>>>()?;
    let within = sweep
        .iter()
        .filter(|(_, a)| (a - target).abs() <= tolerance)
        .max_by(|x, y| x.0.total_cmp(&y.0));
    let (weight, accuracy) = match within {
        Some(&c) => c,
        None => *sweep
            .iter()
            .min_by(|x, y| (x.1 - target).abs().total_cmp(&(y.1 - target).abs()))
            .expect("non-empty"),
    };
    Ok(WeightChoice { weight, accuracy, sweep })
}
