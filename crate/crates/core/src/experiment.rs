//! Side-by-side training of a standard, an adversarially trained and a
//! data-dependent spectral-norm regularized model on a synthetic task.
//!
//! The protocol: train the standard model, pick the training ε as the
//! smallest grid value at which the standard model is fooled on almost all
//! evaluation points, train the adversarial model at that ε, then sweep the
//! spectral weight and keep the largest one whose validation accuracy
//! matches the adversarial model's.

use rand::Rng as _;
use tracing::info;

use crate::analysis::{robust_accuracy_curve, AccuracyPoint};
use crate::attack::{pga_attack, AttackConfig};
use crate::data::{gen_synthetic, Dataset, SplitDataset, SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::linalg::NormOrder;
use crate::network::Network;
use crate::par;
use crate::rng::derive;
use crate::train::{
    accuracy, log_grid, select_weight, train, AdversarialParams, DataDepSnrParams, EpochMetrics, Objective,
    SnrVariant, TrainConfig, WeightChoice,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub data: SyntheticSpec,
    pub standardize: bool,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    /// Multiplier on the Glorot initial weights of every layer.
    pub init_gain: f64,
    /// Optimizer settings shared by every model; the objective is replaced.
    pub train: TrainConfig,
    /// Attack used for training and evaluation; its ε is replaced by the selected one.
    pub attack: AttackConfig,
    pub eps_grid: Vec<f64>,
    /// Fraction of evaluation points the standard model must misclassify at the training ε.
    pub fooled_fraction: f64,
    /// Number of test points used for ε selection and evaluation.
    pub eval_points: usize,
    pub adversarial_weight: f64,
    pub snr_grid: Vec<f64>,
    pub snr_power_iters: usize,
    /// Allowed gap between validation accuracies when matching the spectral weight.
    pub accuracy_tolerance: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec {
                kind: SyntheticKind::Blobs,
                n_per_class: 200,
                classes: 3,
                noise: 0.1,
                dim: 100,
                seed: 1,
            },
            standardize: false,
            hidden: vec![32, 32],
            init_seed: 2,
            init_gain: 1.0,
            train: TrainConfig { epochs: 50, batch_size: 32, learning_rate: 0.02, momentum: 0.9, seed: 4, ..Default::default() },
            attack: AttackConfig { seed: 3, ..AttackConfig::new(NormOrder::Two, 1.0, 10) },
            eps_grid: log_grid(0.05, 5.0, 21),
            fooled_fraction: 0.95,
            eval_points: 100,
            adversarial_weight: 3.0,
            snr_grid: log_grid(1e-3, 3e-2, 4),
            snr_power_iters: 10,
            accuracy_tolerance: 0.01,
        }
    }
}

impl ComparisonConfig {
    pub fn prepare_data(&self) -> Result<SplitDataset> {
        let mut data = gen_synthetic(&self.data)?;
        if self.standardize {
            data.standardize();
        }
        Ok(data)
    }

    pub fn initial_network(&self) -> Network {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.data.dim);
        sizes.extend(&self.hidden);
        sizes.push(self.data.classes);
        let mut net = Network::random(&sizes, self.init_seed);
        for layer in net.layers_mut() {
            layer.weight.scale(self.init_gain);
        }
        net
    }

    pub fn attack_at(&self, eps: f64) -> AttackConfig {
        self.attack.with_eps(eps)
    }

    pub fn adversarial_objective(&self, eps: f64) -> Objective {
        Objective::Adversarial(AdversarialParams { attack: self.attack_at(eps), weight: self.adversarial_weight })
    }

    pub fn snr_objective(&self, weight: f64) -> Objective {
        Objective::DataDepSnr(self.snr_params(weight))
    }

    fn snr_params(&self, weight: f64) -> DataDepSnrParams {
        DataDepSnrParams { weight, variant: SnrVariant::SigmaSquared, power_iters: self.snr_power_iters }
    }

    /// `(1 − t)·adversarial + t·spectral` at the given ε and spectral weight.
    pub fn interpolated_objective(&self, t: f64, eps: f64, snr_weight: f64) -> Objective {
        Objective::Interpolated {
            t,
            at: AdversarialParams { attack: self.attack_at(eps), weight: self.adversarial_weight },
            snr: self.snr_params(snr_weight),
        }
    }

    pub fn train_with(&self, data: &SplitDataset, objective: Objective) -> Result<(Network, Vec<EpochMetrics>)> {
        let cfg = TrainConfig { objective, ..self.train.clone() };
        train(&self.initial_network(), &data.train, &data.val, &cfg)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: String,
    pub net: Network,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub data: SplitDataset,
    /// The first `eval_points` test samples.
    pub eval: Dataset,
    pub eps: f64,
    /// Standard model's robust accuracy over the ε grid, used to pick `eps`.
    pub standard_curve: Vec<AccuracyPoint>,
    pub standard: TrainedModel,
    pub adversarial: TrainedModel,
    pub snr: TrainedModel,
    pub snr_choice: WeightChoice,
}

impl Comparison {
    pub fn models(&self) -> [&TrainedModel; 3] {
        [&self.standard, &self.adversarial, &self.snr]
    }
}

/// Smallest grid ε at which at least `fooled_fraction` of `data` is
/// misclassified after the attack.
pub fn select_training_eps(
    net: &Network,
    data: &Dataset,
    grid: &[f64],
    template: &AttackConfig,
    fooled_fraction: f64,
) -> Result<(f64, Vec<AccuracyPoint>)> {
    let curve = robust_accuracy_curve(net, data, grid, template)?;
    let eps = curve
        .iter()
        .find(|p| p.eps > 0.0 && 1.0 - p.accuracy >= fooled_fraction - 1e-12)
        .map(|p| p.eps)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("no grid ε fools {:.0}% of the evaluation points", 100.0 * fooled_fraction))
        })?;
    Ok((eps, curve))
}

pub fn run_comparison(cfg: &ComparisonConfig) -> Result<Comparison> {
    let data = cfg.prepare_data()?;
    let eval = data.test.take(cfg.eval_points);

    let (std_net, std_metrics) = cfg.train_with(&data, Objective::Standard)?;
    let (eps, standard_curve) =
        select_training_eps(&std_net, &eval, &cfg.eps_grid, &cfg.attack, cfg.fooled_fraction)?;
    info!(eps, "selected training ε");

    let (at_net, at_metrics) = cfg.train_with(&data, cfg.adversarial_objective(eps))?;
    let target = accuracy(&at_net, &data.val)?;
    let snr_choice = select_weight(&cfg.snr_grid, target, cfg.accuracy_tolerance, |w| {
        let (net, _) = cfg.train_with(&data, cfg.snr_objective(w))?;
        accuracy(&net, &data.val)
    })?;
    info!(weight = snr_choice.weight, target, "selected spectral weight");
    let (snr_net, snr_metrics) = cfg.train_with(&data, cfg.snr_objective(snr_choice.weight))?;

    Ok(Comparison {
        data,
        eval,
        eps,
        standard_curve,
        standard: TrainedModel { method: "standard".into(), net: std_net, metrics: std_metrics },
        adversarial: TrainedModel { method: "adversarial".into(), net: at_net, metrics: at_metrics },
        snr: TrainedModel { method: "dd_snr".into(), net: snr_net, metrics: snr_metrics },
        snr_choice,
    })
}

/// Attack perturbation `x* − x` for every sample, with sample `i` seeded by
/// `derive(cfg.seed, i)`.
pub fn adversarial_perturbations(net: &Network, data: &Dataset, cfg: &AttackConfig) -> Result<Vec<Vec<f64>>> {
    par::map_range(data.len(), |i| {
        let x = &data.inputs[i];
        let run = AttackConfig { seed: derive(cfg.seed, i as u64), ..cfg.clone() };
        pga_attack(net, x, data.labels[i], &run).map(|r| r.perturbation(x))
    })
    .into_iter()
    .collect()
}

/// Smallest and largest coordinate value over `data`; the cube
/// `[lo, hi]^n` stands in for the input domain.
pub fn input_range(data: &Dataset) -> (f64, f64) {
    data.inputs
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `n` points drawn uniformly from the cube `[lo, hi]^dim`, point `i`
/// seeded by `derive(seed, i)`.
pub fn uniform_in_cube(dim: usize, lo: f64, hi: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n as u64)
        .map(|i| {
            let mut rng = crate::rng::rng(derive(seed, i));
            (0..dim).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
        })
        .collect()
}
