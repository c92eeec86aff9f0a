//! Parametric densities: diagonal Gaussians, the standard-normal prior, and
//! Bernoulli pixel likelihoods.
//!
//! All log-densities are computed on the tape so that gradients flow to the
//! distribution parameters (and, for the Gaussian, to the evaluation point —
//! the sampler needs ∇_z log p).

use rand_chacha::ChaCha8Rng;

use crate::rng::normal_tensor;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Probability clamp applied to Bernoulli parameters.
pub const PROB_EPS: f64 = 1e-7;

/// Diagonal Gaussian over a batch: `mu` and `log_var` are both `batch × d`.
#[derive(Clone, Copy)]
pub struct DiagGaussian<'t> {
    pub mu: Var<'t>,
    pub log_var: Var<'t>,
}

impl<'t> DiagGaussian<'t> {
    pub fn new(mu: Var<'t>, log_var: Var<'t>) -> Self {
        assert_eq!(mu.shape(), log_var.shape(), "mu/log_var shape mismatch");
        DiagGaussian { mu, log_var }
    }

    pub fn dim(&self) -> usize {
        self.mu.shape()[1]
    }

    pub fn batch(&self) -> usize {
        self.mu.shape()[0]
    }

    /// Per-row log-density of `z` (`batch × d` → `batch`):
    /// `Σ_i −½·ln 2π − ½·log_var_i − (z_i − μ_i)² / (2·exp(log_var_i))`.
    pub fn log_density(&self, z: Var<'t>) -> Var<'t> {
        let d = self.dim();
        assert_eq!(z.shape()[1], d, "z dimension mismatch");
        let diff = z.sub(self.mu);
        let inv_var = self.log_var.neg().exp();
        let quad = diff.mul(diff).mul(inv_var).row_sum();
        let logdet = self.log_var.row_sum();
        quad.add(logdet)
            .scale(-0.5)
            .add_scalar(-0.5 * LN_2PI * d as f64)
    }

    /// Reparameterized sample `z = μ + exp(½·log_var) ∘ ε` with `ε ~ N(0, I)`
    /// drawn from `rng`. Gradients flow to `mu` and `log_var`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Var<'t> {
        let shape = self.mu.shape();
        let eps = self.mu.tape().leaf(normal_tensor(&shape, rng));
        self.mu.add(self.log_var.scale(0.5).exp().mul(eps))
    }

    /// Closed-form KL(self ‖ other) per row, for equal dimensions:
    /// `½ Σ_i [ lv_b − lv_a + exp(lv_a − lv_b) + (μ_a − μ_b)²·exp(−lv_b) − 1 ]`.
    pub fn kl(&self, other: &DiagGaussian<'t>) -> Var<'t> {
        assert_eq!(self.dim(), other.dim(), "KL dimension mismatch");
        let d = self.dim();
        let lv_diff = self.log_var.sub(other.log_var);
        let var_ratio = lv_diff.exp();
        let mean_diff = self.mu.sub(other.mu);
        let mean_term = mean_diff.mul(mean_diff).mul(other.log_var.neg().exp());
        var_ratio
            .add(mean_term)
            .sub(lv_diff)
            .row_sum()
            .add_scalar(-(d as f64))
            .scale(0.5)
    }
}

/// The fixed `N(0, I)` prior in `d` dimensions.
#[derive(Clone, Copy, Debug)]
pub struct StandardNormalPrior {
    pub dim: usize,
}

impl StandardNormalPrior {
    pub fn new(dim: usize) -> Self {
        StandardNormalPrior { dim }
    }

    /// Per-row log-density of `z` (`batch × d`).
    pub fn log_density<'t>(&self, z: Var<'t>) -> Var<'t> {
        assert_eq!(z.shape()[1], self.dim, "z dimension mismatch");
        z.mul(z)
            .row_sum()
            .scale(-0.5)
            .add_scalar(-0.5 * LN_2PI * self.dim as f64)
    }

    /// As a batch of diagonal Gaussians on the tape.
    pub fn bind<'t>(&self, tape: &'t Tape, batch: usize) -> DiagGaussian<'t> {
        DiagGaussian {
            mu: tape.leaf(Tensor::zeros(&[batch, self.dim])),
            log_var: tape.leaf(Tensor::zeros(&[batch, self.dim])),
        }
    }

    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Tensor {
        normal_tensor(&[batch, self.dim], rng)
    }
}

/// Per-row Bernoulli log-likelihood `Σ_pixels x·ln p + (1−x)·ln(1−p)`, with
/// `probs` clamped to `[PROB_EPS, 1 − PROB_EPS]`. `x` must be exactly 0/1.
pub fn bernoulli_log_likelihood<'t>(probs: Var<'t>, x: Var<'t>) -> Var<'t> {
    assert_eq!(probs.shape(), x.shape(), "probs/x shape mismatch");
    assert!(
        x.value().data().iter().all(|&v| v == 0.0 || v == 1.0),
        "bernoulli targets must be binary"
    );
    let p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let one_minus_p = p.neg().add_scalar(1.0);
    let one_minus_x = x.neg().add_scalar(1.0);
    x.mul(p.log())
        .add(one_minus_x.mul(one_minus_p.log()))
        .row_sum()
}

/// Per-row Gaussian log-likelihood with fixed variance: the decoder emits the
/// mean. Used where observations are continuous rather than binary.
pub fn gaussian_log_likelihood<'t>(mean: Var<'t>, x: Var<'t>, log_var: f64) -> Var<'t> {
    assert_eq!(mean.shape(), x.shape(), "mean/x shape mismatch");
    let d = mean.shape()[1] as f64;
    let diff = x.sub(mean);
    diff.mul(diff)
        .row_sum()
        .scale(-0.5 * (-log_var).exp())
        .add_scalar(-0.5 * d * (LN_2PI + log_var))
}
