//! Fully connected layers and the Adam optimizer.
//!
//! Models own plain [`Tensor`] parameters and bind them onto a tape per
//! training step via [`Mlp::bind`]; the optimizer then updates the plain
//! tensors from the gradients keyed by parameter name.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x,
        }
    }
}

/// One dense layer: `activation(x · weightᵀ + bias)` with `weight` stored
/// `out × in`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// A chain of dense layers. An empty chain is the identity map.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    input_dim: usize,
    output_dim: usize,
}

impl Mlp {
    /// Builds a zero-initialized network with the given widths; `dims` lists
    /// input, hidden..., output. Hidden layers get `hidden`, the final layer
    /// `output` activation.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let is_last = layers.len() + 1 == dims.len() - 1;
            layers.push(DenseLayer::zeros(
                w[1],
                w[0],
                if is_last { output } else { hidden },
            ));
        }
        Mlp { layers, input_dim: dims[0], output_dim: *dims.last().unwrap() }
    }

    /// The identity map on `dim`-wide inputs (no layers).
    pub fn identity(dim: usize) -> Self {
        Mlp { layers: Vec::new(), input_dim: dim, output_dim: dim }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Glorot-uniform weights, zero biases, deterministic per `rng` state.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        for layer in &mut self.layers {
            let fan_in = layer.in_dim() as f64;
            let fan_out = layer.out_dim() as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in layer.bias.data_mut() {
                *b = 0.0;
            }
        }
    }

    /// Records parameters on the tape and returns a forward-capable binding.
    pub fn bind<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| BoundLayer {
                    weight: tape.leaf(l.weight.clone()),
                    bias: tape.leaf(l.bias.clone()),
                    activation: l.activation,
                })
                .collect(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
        }
    }

    /// Forward pass without gradient tracking, via a throwaway tape.
    pub fn forward_tensor(&self, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        self.bind(&tape).forward(xv).value()
    }
}

pub struct BoundLayer<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub activation: Activation,
}

pub struct MlpVars<'t> {
    pub layers: Vec<BoundLayer<'t>>,
    input_dim: usize,
    output_dim: usize,
}

impl<'t> MlpVars<'t> {
    /// Binding with externally supplied parameter vars (gradient-check
    /// harnesses substitute perturbed leaves this way).
    pub fn from_parts(layers: Vec<BoundLayer<'t>>, input_dim: usize, output_dim: usize) -> Self {
        MlpVars { layers, input_dim, output_dim }
    }

    /// `x` is `batch × input_dim`; the result is `batch × output_dim`.
    pub fn forward(&self, x: Var<'t>) -> Var<'t> {
        assert_eq!(
            x.shape()[1],
            self.input_dim,
            "input width {} does not match declared {}",
            x.shape()[1],
            self.input_dim
        );
        let mut h = x;
        for layer in &self.layers {
            h = layer
                .activation
                .apply(h.matmul(layer.weight.transpose()).add_bias(layer.bias));
        }
        debug_assert_eq!(h.shape()[1], self.output_dim);
        h
    }

    /// Named (weight, bias) vars for gradient collection.
    pub fn param_vars(&self, prefix: &str, out: &mut Vec<(String, Var<'t>)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), layer.weight));
            out.push((format!("{prefix}.{i}.bias"), layer.bias));
        }
    }
}

/// Named views over a model's parameters, shared by the optimizer and the
/// checkpoint writer. Names must be unique and stable across calls.
pub trait Parametrized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

impl Parametrized for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                vec![
                    (format!("{i}.weight"), &l.weight),
                    (format!("{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                vec![
                    (format!("{i}.weight"), &mut l.weight),
                    (format!("{i}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
}

/// Adam with bias correction. Moments are allocated lazily per parameter
/// name and mirror the parameter shapes.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `(name, param, grad)` triples. Rejects non-finite
    /// gradients, naming the offending parameter.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut Tensor)>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), OptimError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in params {
            let Some(grad) = grads.get(&name) else { continue };
            if !grad.is_finite() {
                return Err(OptimError::NonFiniteGradient(name));
            }
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| {
                    (Tensor::zeros(param.shape()), Tensor::zeros(param.shape()))
                });
            for ((p, g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Collects gradients for named vars into an optimizer-ready map.
pub fn collect_grads(
    grads: &Gradients,
    named: &[(String, Var<'_>)],
) -> BTreeMap<String, Tensor> {
    named
        .iter()
        .map(|(name, var)| (name.clone(), grads.get_or_zeros(*var)))
        .collect()
}
