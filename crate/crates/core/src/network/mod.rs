//! Piecewise-linear ReLU classifiers.
//!
//! A [`Network`] is an ordered stack of dense affine layers, every layer but
//! the last followed by a ReLU. Within one activation pattern the network is
//! exactly affine, so its Jacobian is the masked weight product
//! `W^L Φ^{L-1} W^{L-1} ⋯ Φ^1 W^1`. [`JacobianOperator`] freezes the pattern at
//! a point and exposes forward (JVP) and backward (VJP) products without
//! materializing that matrix.

mod conv;
mod io;
mod pattern;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::all_finite;
use crate::linalg::{LinearOperator, Mat};

pub use conv::{conv_to_toeplitz, ConvGeometry};
pub use io::{read_network, write_network, MAGIC, VERSION};
pub use pattern::ActivationPattern;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out_dim × in_dim
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl Layer {
    pub fn new(weight: Mat, bias: Vec<f64>, relu: bool) -> Result<Self> {
        check_dim(weight.rows(), bias.len())?;
        Ok(Self { weight, bias, relu })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Shape-only description of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub has_relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Everything a forward pass computes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub pattern: ActivationPattern,
    /// Per layer, before the activation.
    pub pre_activations: Vec<Vec<f64>>,
    /// Per layer, after the activation (equal to the pre-activation for the
    /// final layer).
    pub post_activations: Vec<Vec<f64>>,
}

/// Parameter gradient for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Gradients for every layer of a network, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrad { weight: Mat::zeros(l.out_dim(), l.in_dim()), bias: vec![0.0; l.out_dim()] })
            .collect();
        Self { layers }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(s, &b.weight);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.scale(s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    /// Flattened in the same order as [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && all_finite(&l.bias))
    }
}

impl Network {
    /// Validates shapes: layers chain, the final layer is linear and every
    /// parameter is finite.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].out_dim(), pair[1].in_dim())?;
        }
        if layers.last().is_some_and(|l| l.relu) {
            return Err(Error::InvalidArgument("final layer must not have a ReLU".into()));
        }
        for l in &layers {
            check_dim(l.out_dim(), l.bias.len())?;
            if !l.weight.is_finite() || !all_finite(&l.bias) {
                return Err(Error::InvalidArgument("non-finite parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Single affine layer `x ↦ W x + b`.
    pub fn affine(weight: Mat, bias: Vec<f64>) -> Result<Self> {
        Self::new(vec![Layer::new(weight, bias, false)?])
    }

    /// Glorot-uniform weights `U(−s, s)`, `s = sqrt(6 / (in + out))`, zero biases.
    /// `dims` lists input, hidden widths and output.
    pub fn random(dims: &[usize], seed: u64) -> Self {
        Self::random_with_bias(dims, 0.0, seed)
    }

    /// Like [`Network::random`] with biases drawn from `U(−bias_scale, bias_scale)`.
    pub fn random_with_bias(dims: &[usize], bias_scale: f64, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "dimensions must be positive");
        let mut rng = crate::rng::rng(seed);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Mat::from_fn(fan_out, fan_in, |_, _| rng.random_range(-s..s));
                let bias = (0..fan_out)
                    .map(|_| if bias_scale > 0.0 { rng.random_range(-bias_scale..bias_scale) } else { 0.0 })
                    .collect();
                Layer { weight, bias, relu: i + 1 < n_layers }
            })
            .collect();
        Self { layers }
    }

    /// Network made of the hidden layers only, mapping `x ↦ φ^{L-1}(x)`.
    /// `None` when there is no hidden layer.
    pub fn hidden_map(&self) -> Option<Network> {
        if self.layers.len() < 2 {
            return None;
        }
        Some(Network { layers: self.layers[..self.layers.len() - 1].to_vec() })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec { in_dim: l.in_dim(), out_dim: l.out_dim(), has_relu: l.relu })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Total number of ReLU units `m`.
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().filter(|l| l.relu).map(Layer::out_dim).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_dim() * (l.in_dim() + 1)).sum()
    }

    /// All parameters, layer by layer: row-major weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.param_count(), params.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// `θ ← θ − lr·g`
    pub fn apply_update(&mut self, lr: f64, grads: &ParamGrads) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.add_scaled(-lr, &g.weight);
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }

    /// Multiplies the final layer's weights and bias by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.scale(c);
        last.bias.iter_mut().for_each(|b| *b *= c);
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_dim(self.input_dim(), x.len())?;
        let mut bits = Vec::with_capacity(self.neuron_count());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut post_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&current)?;
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            let a = if layer.relu {
                bits.extend(z.iter().map(|&v| v >= 0.0));
                z.iter().map(|&v| if v >= 0.0 { v } else { 0.0 }).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
            post_activations.push(a.clone());
            current = a;
        }
        Ok(ForwardTrace {
            logits: current,
            pattern: ActivationPattern::from_bits(&bits),
            pre_activations,
            post_activations,
        })
    }

    /// Logits only.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&current)?;
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
                if layer.relu && *zi < 0.0 {
                    *zi = 0.0;
                }
            }
            current = z;
        }
        Ok(current)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::linalg::vector::argmax(&self.eval(x)?))
    }

    pub fn activation_pattern(&self, x: &[f64]) -> Result<ActivationPattern> {
        Ok(self.forward(x)?.pattern)
    }

    /// True iff both points share an activation pattern (a ReLU cell).
    pub fn same_cell(&self, x1: &[f64], x2: &[f64]) -> Result<bool> {
        check_dim(x1.len(), x2.len())?;
        Ok(self.activation_pattern(x1)? == self.activation_pattern(x2)?)
    }

    /// Linearization at `x` with the activation pattern frozen.
    pub fn jacobian_operator(&self, x: &[f64]) -> Result<JacobianOperator<'_>> {
        let trace = self.forward(x)?;
        Ok(JacobianOperator::from_trace(self, &trace))
    }

    /// Materialized Jacobian, `d × n`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Mat> {
        self.jacobian_operator(x)?.to_mat()
    }

    pub fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.jacobian_operator(x)?.jvp(v)
    }

    pub fn vjp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.jacobian_operator(x)?.vjp(u)
    }

    /// Gradient of `gᵀ f(x)` with respect to every weight and bias.
    pub fn param_gradients(&self, x: &[f64], logit_grad: &[f64]) -> Result<ParamGrads> {
        check_dim(self.output_dim(), logit_grad.len())?;
        let trace = self.forward(x)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = logit_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input: &[f64] = if idx == 0 { x } else { &trace.post_activations[idx - 1] };
            grads.push(LayerGrad { weight: Mat::outer(&delta, input), bias: delta.clone() });
            if idx > 0 {
                let mut back = layer.weight.matvec_t(&delta)?;
                if self.layers[idx - 1].relu {
                    for (b, z) in back.iter_mut().zip(&trace.pre_activations[idx - 1]) {
                        if *z < 0.0 {
                            *b = 0.0;
                        }
                    }
                }
                delta = back;
            }
        }
        grads.reverse();
        Ok(ParamGrads { layers: grads })
    }

    /// Gradient of the bilinear form `uᵀ J_f(x) v` with respect to the
    /// parameters, holding the activation pattern at `x` fixed. Bias
    /// gradients are zero since the Jacobian does not depend on biases
    /// within a cell.
    pub fn jacobian_bilinear_gradients(&self, x: &[f64], v: &[f64], u: &[f64]) -> Result<ParamGrads> {
        let op = self.jacobian_operator(x)?;
        check_dim(self.input_dim(), v.len())?;
        check_dim(self.output_dim(), u.len())?;
        // Forward signals through the masked linear network.
        let mut signals = Vec::with_capacity(self.layers.len());
        let mut current = v.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            signals.push(current.clone());
            let mut t = layer.weight.matvec(&current)?;
            op.mask(idx, &mut t);
            current = t;
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = u.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            grads.push(LayerGrad { weight: Mat::outer(&delta, &signals[idx]), bias: vec![0.0; layer.out_dim()] });
            if idx > 0 {
                let mut back = layer.weight.matvec_t(&delta)?;
                op.mask(idx - 1, &mut back);
                delta = back;
            }
        }
        grads.reverse();
        Ok(ParamGrads { layers: grads })
    }
}

/// The Jacobian of a network at a fixed point, as a linear operator.
#[derive(Debug, Clone)]
pub struct JacobianOperator<'a> {
    net: &'a Network,
    /// Per layer: `Some(mask)` for ReLU layers.
    masks: Vec<Option<Vec<bool>>>,
}

impl<'a> JacobianOperator<'a> {
    pub fn from_trace(net: &'a Network, trace: &ForwardTrace) -> Self {
        let masks = net
            .layers
            .iter()
            .zip(&trace.pre_activations)
            .map(|(l, z)| l.relu.then(|| z.iter().map(|&v| v >= 0.0).collect()))
            .collect();
        Self { net, masks }
    }

    fn mask(&self, layer: usize, v: &mut [f64]) {
        if let Some(m) = &self.masks[layer] {
            for (x, &on) in v.iter_mut().zip(m) {
                if !on {
                    *x = 0.0;
                }
            }
        }
    }

    /// `J v`, layer by layer.
    pub fn jvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.net.input_dim(), v.len())?;
        let mut current = v.to_vec();
        for (idx, layer) in self.net.layers.iter().enumerate() {
            let mut t = layer.weight.matvec(&current)?;
            self.mask(idx, &mut t);
            current = t;
        }
        Ok(current)
    }

    /// `Jᵀ u`, traversing layers in reverse.
    pub fn vjp(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.net.output_dim(), u.len())?;
        let mut current = u.to_vec();
        for (idx, layer) in self.net.layers.iter().enumerate().rev() {
            self.mask(idx, &mut current);
            current = layer.weight.matvec_t(&current)?;
        }
        Ok(current)
    }

    /// `W^L Φ^{L-1} ⋯ Φ^1 W^1`
    pub fn to_mat(&self) -> Result<Mat> {
        let mut acc: Option<Mat> = None;
        for (idx, layer) in self.net.layers.iter().enumerate() {
            let mut m = match acc {
                None => layer.weight.clone(),
                Some(prev) => layer.weight.matmul(&prev)?,
            };
            if let Some(mask) = &self.masks[idx] {
                for (i, &on) in mask.iter().enumerate() {
                    if !on {
                        m.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
                    }
                }
            }
            acc = Some(m);
        }
        Ok(acc.expect("non-empty network"))
    }
}

impl LinearOperator for JacobianOperator<'_> {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.jvp(v)
    }

    fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.vjp(u)
    }
}
