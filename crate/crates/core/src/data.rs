//! Synthetic classification datasets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Isotropic Gaussian clusters with centers on the unit circle of the
    /// first two coordinates.
    Blobs,
    /// Two interleaved half circles.
    Moons,
    /// Concentric circles, class `c` at radius `c + 1`.
    Rings,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "moons" => Ok(Self::Moons),
            "rings" => Ok(Self::Rings),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Blobs => "blobs",
            Self::Moons => "moons",
            Self::Rings => "rings",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_per_class: usize,
    pub classes: usize,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    pub noise: f64,
    /// Input dimension; coordinates beyond the first two carry noise only.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { kind: SyntheticKind::Blobs, n_per_class: 200, classes: 3, noise: 0.1, dim: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
        }
        if let Some(first) = inputs.first() {
            if let Some(row) = inputs.iter().find(|r| r.len() != first.len()) {
                return Err(Error::DimensionMismatch { expected: first.len(), got: row.len() });
            }
        }
        Ok(Self { inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset { inputs: self.inputs[..n].to_vec(), labels: self.labels[..n].to_vec(), classes: self.classes }
    }

    /// Per-feature mean and standard deviation.
    pub fn feature_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for x in &self.inputs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for x in &self.inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }

    /// `(x − mean) / std` per feature; features with zero spread are only centered.
    pub fn standardize_with(&mut self, mean: &[f64], std: &[f64]) {
        for x in &mut self.inputs {
            for ((v, m), s) in x.iter_mut().zip(mean).zip(std) {
                *v -= m;
                if *s > 0.0 {
                    *v /= s;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    /// Standardizes every split with statistics of the training split.
    pub fn standardize(&mut self) {
        let (mean, std) = self.train.feature_stats();
        for split in [&mut self.train, &mut self.val, &mut self.test] {
            split.standardize_with(&mean, &std);
        }
    }
}

/// Deterministic synthetic dataset, shuffled and split 60/20/20.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SplitDataset> {
    if spec.n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    if spec.classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if spec.dim < 2 {
        return Err(Error::InvalidArgument("dim must be at least 2".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise must be finite and >= 0, got {}", spec.noise)));
    }
    if spec.kind == SyntheticKind::Moons && spec.classes != 2 {
        return Err(Error::InvalidArgument("moons has exactly two classes".into()));
    }
    let mut rng = crate::rng::rng(spec.seed);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut samples = Vec::with_capacity(spec.n_per_class * spec.classes);
    for c in 0..spec.classes {
        for i in 0..spec.n_per_class {
            let (a, b) = match spec.kind {
                SyntheticKind::Blobs => {
                    let t = 2.0 * PI * c as f64 / spec.classes as f64;
                    (t.cos(), t.sin())
                }
                SyntheticKind::Rings => {
                    let t = rng.random_range(0.0..2.0 * PI);
                    let r = (c + 1) as f64;
                    (r * t.cos(), r * t.sin())
                }
                SyntheticKind::Moons => {
                    let t = PI * i as f64 / (spec.n_per_class.max(2) - 1) as f64;
                    if c == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    }
                }
            };
            let mut x = vec![0.0; spec.dim];
            x[0] = a;
            x[1] = b;
            if spec.noise > 0.0 {
                for v in &mut x {
                    *v += normal.sample(&mut rng);
                }
            }
            samples.push((x, c));
        }
    }
    samples.shuffle(&mut rng);
    let n = samples.len();
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let split = |range: std::ops::Range<usize>| {
        let (inputs, labels) = samples[range].iter().cloned().unzip();
        Dataset { inputs, labels, classes: spec.classes }
    };
    Ok(SplitDataset { train: split(0..n_train), val: split(n_train..n_train + n_val), test: split(n_train + n_val..n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_blobs_sit_on_centers() {
        let spec = SyntheticSpec { noise: 0.0, n_per_class: 10, ..SyntheticSpec::default() };
        let d = gen_synthetic(&spec).unwrap();
        for (x, &y) in d.train.inputs.iter().zip(&d.train.labels) {
            let t = 2.0 * PI * y as f64 / 3.0;
            assert_eq!(x, &vec![t.cos(), t.sin()]);
        }
        assert_eq!(d.train.len() + d.val.len() + d.test.len(), 30);
        assert_eq!((d.train.len(), d.val.len()), (18, 6));
    }

    #[test]
    fn same_seed_same_data() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::Rings] {
            let spec = SyntheticSpec { kind, dim: 5, seed: 9, ..SyntheticSpec::default() };
            assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        }
        let spec = SyntheticSpec { kind: SyntheticKind::Moons, classes: 2, ..SyntheticSpec::default() };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!("spirals".parse::<SyntheticKind>().is_err());
        let bad = SyntheticSpec { n_per_class: 0, ..SyntheticSpec::default() };
        assert!(gen_synthetic(&bad).is_err());
        let bad = SyntheticSpec { kind: SyntheticKind::Moons, classes: 3, ..SyntheticSpec::default() };
        assert!(gen_synthetic(&bad).is_err());
    }

    #[test]
    fn standardized_train_split_has_unit_moments() {
        let spec = SyntheticSpec { dim: 4, ..SyntheticSpec::default() };
        let mut d = gen_synthetic(&spec).unwrap();
        d.standardize();
        let (mean, std) = d.train.feature_stats();
        for (m, s) in mean.iter().zip(&std) {
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_spread_features_are_only_centered() {
        let mut d = Dataset::new(vec![vec![1.0, 2.0], vec![3.0, 2.0]], vec![0, 1], 2).unwrap();
        let (m, s) = d.feature_stats();
        d.standardize_with(&m, &s);
        assert_eq!(d.inputs, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
