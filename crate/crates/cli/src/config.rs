//! Experiment configuration: a TOML document with `[data]`, `[model]`,
//! `[train]`, `[attack]` and `[analysis]` sections plus a global `seed`.
//!
//! Every field has a default, unknown keys are rejected, and `--set
//! section.key=value` overrides are applied to the parsed document before it
//! is checked, so they go through exactly the same validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use onlab::attack::{AdvLoss, AttackConfig, AttackInit, LabelMode};
use onlab::data::{SyntheticKind, SyntheticSpec};
use onlab::linalg::NormOrder;
use onlab::opnorm::Alpha;
use onlab::rng::derive;
use onlab::train::{AdversarialParams, DataDepSnrParams, Objective, SnrVariant, TrainConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A norm order written as `1`, `2`, `"inf"` or any real `p > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm(pub NormOrder);

impl Serialize for Norm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Float(f) => f.to_string(),
            Raw::Text(s) => s,
        };
        NormOrder::from_str(&text).map(Norm).map_err(serde::de::Error::custom)
    }
}

/// Attack step size: a positive number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step(pub Alpha);

impl Serialize for Step {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Alpha::Finite(a) => s.serialize_f64(a),
            Alpha::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(Step(Alpha::Finite(i as f64))),
            Raw::Float(f) => Ok(Step(Alpha::Finite(f))),
            Raw::Text(s) if matches!(s.as_str(), "inf" | "infinity") => Ok(Step(Alpha::Infinity)),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("step size must be a number or \"inf\", got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Source of every seed not set explicitly in a section.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `blobs`, `moons` or `rings`.
    pub kind: String,
    pub n_per_class: usize,
    pub classes: usize,
    pub noise: f64,
    pub dim: usize,
    /// Standardize features with training-split statistics.
    pub standardize: bool,
    /// Load this dataset CSV (as written by `gen-data`) instead of generating one.
    pub path: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: "blobs".into(),
            n_per_class: 200,
            classes: 3,
            noise: 0.1,
            dim: 2,
            standardize: true,
            path: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    /// Standard deviation of the random initial biases (0 gives zero biases).
    pub bias_scale: f64,
    /// Multiplier on the initial weights.
    pub init_gain: f64,
    /// Start from this network file instead of a random initialization.
    pub checkpoint: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![16, 16], bias_scale: 0.0, init_gain: 1.0, checkpoint: None, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// `standard`, `adversarial`, `global_snr`, `dd_snr`, `dd_onr` or `interpolated`.
    pub objective: String,
    /// Regularization weight; for `interpolated` the adversarial weight.
    pub weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub power_iters: usize,
    /// `sigma_squared` or `sum_of_squares` (data-dependent spectral objective).
    pub snr_variant: String,
    /// Probe radius of the sum-of-squares variant.
    pub sos_eps: f64,
    pub onr_p: Norm,
    pub onr_q: Norm,
    pub use_q_power: bool,
    /// Interpolation position, 0 = adversarial, 1 = spectral.
    pub t: f64,
    /// Spectral weight of the `interpolated` objective.
    pub snr_weight: f64,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            objective: "standard".into(),
            weight: 0.0,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            power_iters: 10,
            snr_variant: "sigma_squared".into(),
            sos_eps: 0.1,
            onr_p: Norm(NormOrder::Two),
            onr_q: Norm(NormOrder::Two),
            use_q_power: false,
            t: 0.5,
            snr_weight: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub p: Norm,
    pub eps: f64,
    pub iterations: usize,
    /// Defaults to `2ε / iterations`.
    pub alpha: Option<Step>,
    /// `ce` (cross-entropy) or `logit` (ℓq distance from the clean logits).
    pub loss: String,
    pub loss_q: Norm,
    pub temperature: f64,
    /// `uniform` or `clean`.
    pub init: String,
    /// `true` or `predicted`.
    pub label: String,
    pub target: Option<usize>,
    pub normalize_u: bool,
    pub seed: Option<u64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            p: Norm(NormOrder::Two),
            eps: 0.5,
            iterations: 10,
            alpha: None,
            loss: "ce".into(),
            loss_q: Norm(NormOrder::Two),
            temperature: 1.0,
            init: "uniform".into(),
            label: "true".into(),
            target: None,
            normalize_u: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Split the measurements run on: `train`, `val` or `test`.
    pub split: String,
    /// Number of leading samples of the split; 0 means all.
    pub samples: usize,
    /// `last_hidden` or `logits`.
    pub layer: String,
    pub eps_grid: Vec<f64>,
    /// Fraction of points the standard model must misclassify for `select-eps`.
    pub fooled_fraction: f64,
    /// Radii are `attack.eps · 2^k` for `k` in this inclusive range.
    pub radius_exponents: [i32; 2],
    /// Ball draws per base point for activation sharing.
    pub draws: usize,
    pub theorem_p: Vec<Norm>,
    pub theorem_q: Vec<Norm>,
    pub theorem_iters: usize,
    /// In-cell attack radius as a fraction of the distance to the nearest ReLU boundary.
    pub theorem_eps_fraction: f64,
    /// `train.weight` or `attack.eps`.
    pub sweep_param: String,
    pub sweep_lo: f64,
    pub sweep_hi: f64,
    pub sweep_n: usize,
    pub seed: Option<u64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let all = vec![Norm(NormOrder::One), Norm(NormOrder::Two), Norm(NormOrder::Infinity)];
        Self {
            split: "test".into(),
            samples: 100,
            layer: "last_hidden".into(),
            eps_grid: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0],
            fooled_fraction: 0.95,
            radius_exponents: [-10, 2],
            draws: 20,
            theorem_p: all.clone(),
            theorem_q: all,
            theorem_iters: 10,
            theorem_eps_fraction: 0.5,
            sweep_param: "train.weight".into(),
            sweep_lo: 1e-3,
            sweep_hi: 1.0,
            sweep_n: 4,
            seed: None,
        }
    }
}

// Streams for seeds derived from the global seed.
const DATA_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const ATTACK_STREAM: u64 = 4;
const ANALYSIS_STREAM: u64 = 5;

fn bad(msg: impl fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

impl ExperimentConfig {
    /// Parses `text` (may be empty), applies the overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.message()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| bad(e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    fn validate(&self) -> Result<(), CliError> {
        SyntheticKind::from_str(&self.data.kind).map_err(bad)?;
        for (what, path) in [("data.path", &self.data.path), ("model.checkpoint", &self.model.checkpoint)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(bad(format!("{what}: {} does not exist", p.display())));
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return Err(bad("model.hidden widths must be positive"));
        }
        if self.train.epochs == 0 {
            return Err(bad("train.epochs must be at least 1"));
        }
        self.objective()?.validate().map_err(bad)?;
        self.train_config()?;
        self.attack_config().map_err(bad)?;
        if !matches!(self.analysis.split.as_str(), "train" | "val" | "test") {
            return Err(bad(format!("analysis.split must be train, val or test, got `{}`", self.analysis.split)));
        }
        self.measure_layer()?;
        if self.analysis.eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(bad("analysis.eps_grid entries must be finite and >= 0"));
        }
        if self.analysis.radius_exponents[0] > self.analysis.radius_exponents[1] {
            return Err(bad("analysis.radius_exponents must be [low, high]"));
        }
        if !(self.analysis.theorem_eps_fraction > 0.0 && self.analysis.theorem_eps_fraction < 1.0) {
            return Err(bad("analysis.theorem_eps_fraction must lie in (0, 1)"));
        }
        if self.analysis.theorem_iters == 0 {
            return Err(bad("analysis.theorem_iters must be at least 1"));
        }
        for n in self.analysis.theorem_p.iter().chain(&self.analysis.theorem_q) {
            if !n.0.is_standard() {
                return Err(bad(format!("theorem norms must be 1, 2 or inf, got {}", n.0)));
            }
        }
        if !matches!(self.analysis.sweep_param.as_str(), "train.weight" | "attack.eps") {
            return Err(bad("analysis.sweep_param must be train.weight or attack.eps"));
        }
        if !(self.analysis.sweep_lo > 0.0 && self.analysis.sweep_hi >= self.analysis.sweep_lo) {
            return Err(bad("sweep range must satisfy 0 < sweep_lo <= sweep_hi"));
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or_else(|| derive(self.seed, DATA_STREAM))
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or_else(|| derive(self.seed, MODEL_STREAM))
    }

    pub fn train_seed(&self) -> u64 {
        self.train.seed.unwrap_or_else(|| derive(self.seed, TRAIN_STREAM))
    }

    pub fn attack_seed(&self) -> u64 {
        self.attack.seed.unwrap_or_else(|| derive(self.seed, ATTACK_STREAM))
    }

    pub fn analysis_seed(&self) -> u64 {
        self.analysis.seed.unwrap_or_else(|| derive(self.seed, ANALYSIS_STREAM))
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            kind: SyntheticKind::from_str(&self.data.kind).expect("validated"),
            n_per_class: self.data.n_per_class,
            classes: self.data.classes,
            noise: self.data.noise,
            dim: self.data.dim,
            seed: self.data_seed(),
        }
    }

    pub fn attack_config(&self) -> onlab::Result<AttackConfig> {
        let a = &self.attack;
        let loss = match a.loss.as_str() {
            "ce" => AdvLoss::CrossEntropy { temperature: a.temperature },
            "logit" => AdvLoss::LogitLq { q: a.loss_q.0 },
            other => return Err(onlab::Error::InvalidArgument(format!("attack.loss must be ce or logit, got `{other}`"))),
        };
        let init = match a.init.as_str() {
            "uniform" => AttackInit::Uniform,
            "clean" => AttackInit::Clean,
            other => {
                return Err(onlab::Error::InvalidArgument(format!("attack.init must be uniform or clean, got `{other}`")))
            }
        };
        let label_mode = match a.label.as_str() {
            "true" => LabelMode::True,
            "predicted" => LabelMode::Predicted,
            other => {
                return Err(onlab::Error::InvalidArgument(format!(
                    "attack.label must be true or predicted, got `{other}`"
                )))
            }
        };
        if !a.p.0.is_standard() {
            return Err(onlab::Error::UnsupportedNorm(a.p.0));
        }
        if !(a.eps.is_finite() && a.eps >= 0.0) {
            return Err(onlab::Error::InvalidArgument(format!("attack.eps must be finite and >= 0, got {}", a.eps)));
        }
        if a.iterations == 0 {
            return Err(onlab::Error::InvalidArgument("attack.iterations must be at least 1".into()));
        }
        let mut cfg = AttackConfig {
            loss,
            init,
            label_mode,
            targeted: a.target,
            normalize_u: a.normalize_u,
            seed: self.attack_seed(),
            ..AttackConfig::new(a.p.0, a.eps, a.iterations)
        };
        if let Some(step) = a.alpha {
            cfg.alpha = step.0;
        }
        Ok(cfg)
    }

    pub fn objective(&self) -> Result<Objective, CliError> {
        let t = &self.train;
        let at = || -> Result<AdversarialParams, CliError> {
            Ok(AdversarialParams { attack: self.attack_config().map_err(bad)?, weight: t.weight })
        };
        let variant = match t.snr_variant.as_str() {
            "sigma_squared" => SnrVariant::SigmaSquared,
            "sum_of_squares" => SnrVariant::SumOfSquares { eps: t.sos_eps },
            other => return Err(bad(format!("train.snr_variant must be sigma_squared or sum_of_squares, got `{other}`"))),
        };
        let snr = |weight| DataDepSnrParams { weight, variant, power_iters: t.power_iters };
        Ok(match t.objective.as_str() {
            "standard" => Objective::Standard,
            "adversarial" => Objective::Adversarial(at()?),
            "global_snr" => Objective::GlobalSnr { weight: t.weight, power_iters: t.power_iters },
            "dd_snr" => Objective::DataDepSnr(snr(t.weight)),
            "dd_onr" => Objective::DataDepOnr {
                weight: t.weight,
                p: t.onr_p.0,
                q: t.onr_q.0,
                iters: t.power_iters,
                use_q_power: t.use_q_power,
            },
            "interpolated" => Objective::Interpolated { t: t.t, at: at()?, snr: snr(t.snr_weight) },
            other => return Err(bad(format!("unknown train.objective `{other}`"))),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(bad("train.batch_size must be at least 1"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(bad(format!("train.learning_rate must be positive, got {}", t.learning_rate)));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(bad(format!("train.momentum must lie in [0, 1), got {}", t.momentum)));
        }
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            seed: self.train_seed(),
            objective: self.objective()?,
        })
    }

    pub fn measure_layer(&self) -> Result<onlab::analysis::MeasureLayer, CliError> {
        use onlab::analysis::MeasureLayer;
        match self.analysis.layer.as_str() {
            "last_hidden" => Ok(MeasureLayer::LastHidden),
            "logits" => Ok(MeasureLayer::Logits),
            other => Err(bad(format!("analysis.layer must be last_hidden or logits, got `{other}`"))),
        }
    }

    /// SHA-256 of the resolved configuration's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// Sets `section.key` (or a top-level `key`) in `doc` from `section.key=value`.
/// The value is read as a TOML value, falling back to a bare string.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| bad(format!("override `{spec}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    match keys.as_slice() {
        [key] => {
            doc.insert(key.to_string(), value);
        }
        [section, key] => {
            let entry = doc.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let table = entry.as_table_mut().ok_or_else(|| bad(format!("`{section}` is not a section")))?;
            table.insert(key.to_string(), value);
        }
        _ => return Err(bad(format!("override key `{path}` must be key or section.key"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        assert!(ExperimentConfig::from_toml("[data]\nbogus = 1\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml("[extra]\nx = 1\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml("", &["train.nope=3".into()]).is_err());
    }

    #[test]
    fn overrides_parse_as_toml_values() {
        let cfg = ExperimentConfig::from_toml(
            "[train]\nepochs = 3\n",
            &["train.epochs=7".into(), "attack.p=inf".into(), "model.hidden=[4, 5]".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.attack.p, Norm(NormOrder::Infinity));
        assert_eq!(cfg.model.hidden, vec![4, 5]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn norms_accept_numbers_and_strings() {
        let cfg = ExperimentConfig::from_toml("[attack]\np = 1\nloss_q = \"inf\"\nalpha = \"inf\"\n", &[]).unwrap();
        assert_eq!(cfg.attack.p, Norm(NormOrder::One));
        assert_eq!(cfg.attack.loss_q, Norm(NormOrder::Infinity));
        assert_eq!(cfg.attack_config().unwrap().alpha, Alpha::Infinity);
        assert!(ExperimentConfig::from_toml("[attack]\np = 0.5\n", &[]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in ["train.objective=magic", "data.kind=spirals", "train.momentum=1.0", "analysis.split=dev"] {
            assert!(matches!(ExperimentConfig::from_toml("", &[o.into()]), Err(CliError::Config(_))), "{o}");
        }
        let missing = ExperimentConfig::from_toml("", &["model.checkpoint=\"/nonexistent/net.onlab\"".into()]);
        assert!(matches!(missing, Err(CliError::Config(_))));
    }

    #[test]
    fn section_seeds_derive_from_global_seed() {
        let a = ExperimentConfig::from_toml("seed = 1", &[]).unwrap();
        let b = ExperimentConfig::from_toml("seed = 2", &[]).unwrap();
        assert_ne!(a.train_seed(), b.train_seed());
        assert_ne!(a.train_seed(), a.attack_seed());
        let pinned = ExperimentConfig::from_toml("seed = 2\n[train]\nseed = 5\n", &[]).unwrap();
        assert_eq!(pinned.train_seed(), 5);
        assert_ne!(a.hash(), b.hash());
    }
}
