//! Masked autoregressive flows.
//!
//! A [`FlowStack`] turns a context-conditioned diagonal Gaussian into a
//! richer conditional density by composing MADE blocks with a
//! dimension-reversal permutation between consecutive blocks. Writing a
//! block's output as `x` and its input as `u`, each block computes
//! `x_i = u_i · exp(a_i(x_{<i}, c)) + m_i(x_{<i}, c)` where the masks force
//! `(m_i, a_i)` to depend only on earlier output dimensions and the context.
//!
//! The density direction is a single masked pass: peel each block via
//! `u = (x − m) ∘ exp(−a)` while accumulating `−Σ_i a_i` as the
//! log-determinant. Generation runs dimension-by-dimension and is cheap for
//! the latent sizes used here.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::dist::DiagGaussian;
use crate::nn::{Activation, Mlp, MlpVars, Parametrized};
use crate::rng::{normal_tensor, stream_rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Bound on the log-scale head: raw outputs pass through `5·tanh`, keeping
/// every per-dimension scale inside `[e⁻⁵, e⁵]`.
pub const LOG_SCALE_BOUND: f64 = 5.0;

/// One masked dense layer; `mask` matches `weight` and is fixed at build
/// time.
#[derive(Clone, Debug)]
pub struct MaskedDense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub mask: Tensor,
    pub activation: Activation,
}

/// Masks for a MADE block, derived from per-unit degree assignments.
///
/// Inputs carry degrees `1..=d` for the autoregressed dimensions and `0` for
/// context columns (degree-free: they reach every unit). A hidden unit of
/// degree `g` may read inputs of degree ≤ `g`; the outputs for dimension `i`
/// (both heads) may read hidden units of degree < `i`.
pub fn made_build_masks(
    hidden_widths: &[usize],
    dim: usize,
    context_dim: usize,
    seed: u64,
) -> Vec<Tensor> {
    assert!(dim >= 1, "autoregressive dimension must be at least 1");
    for &w in hidden_widths {
        assert!(
            w >= dim,
            "hidden width {w} below dimension {dim}: cannot assign all degrees"
        );
    }
    let mut rng = stream_rng(seed, 0);
    let input_degrees: Vec<usize> = (1..=dim).chain(std::iter::repeat(0).take(context_dim)).collect();

    // Hidden degrees cycle through 1..=d−1 (guaranteeing coverage), shuffled
    // per layer. With d = 1 there are no predecessors: all units carry pure
    // context (degree 0).
    let degrees_for = |width: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if dim == 1 {
            return vec![0; width];
        }
        let mut degs: Vec<usize> = (0..width).map(|u| 1 + (u % (dim - 1))).collect();
        degs.shuffle(rng);
        degs
    };

    let mut masks = Vec::new();
    let mut prev_degrees = input_degrees;
    for &w in hidden_widths {
        let degs = degrees_for(w, &mut rng);
        let mut mask = Tensor::zeros(&[w, prev_degrees.len()]);
        for (h, &dh) in degs.iter().enumerate() {
            for (j, &dj) in prev_degrees.iter().enumerate() {
                if dj <= dh {
                    mask.data_mut()[h * prev_degrees.len() + j] = 1.0;
                }
            }
        }
        masks.push(mask);
        prev_degrees = degs;
    }

    // Output layer: 2·d units (shift head then log-scale head); the unit for
    // dimension i connects strictly below i.
    let in_w = prev_degrees.len();
    let mut out_mask = Tensor::zeros(&[2 * dim, in_w]);
    for head in 0..2 {
        for i in 1..=dim {
            let row = head * dim + (i - 1);
            for (j, &dj) in prev_degrees.iter().enumerate() {
                if dj < i {
                    out_mask.data_mut()[row * in_w + j] = 1.0;
                }
            }
        }
    }
    masks.push(out_mask);
    masks
}

/// One MADE block: masked hidden layers plus a `2·d`-wide masked output
/// layer holding the shift and raw log-scale heads.
#[derive(Clone, Debug)]
pub struct MadeBlock {
    pub layers: Vec<MaskedDense>,
    dim: usize,
    context_dim: usize,
}

impl MadeBlock {
    /// Builds a zero-initialized block; output heads stay zero after
    /// [`MadeBlock::init`] so a fresh block is exactly the identity map.
    pub fn new(dim: usize, context_dim: usize, hidden_widths: &[usize], mask_seed: u64) -> Self {
        let masks = made_build_masks(hidden_widths, dim, context_dim, mask_seed);
        let mut widths = vec![dim + context_dim];
        widths.extend_from_slice(hidden_widths);
        widths.push(2 * dim);
        let mut layers = Vec::new();
        for (li, w) in widths.windows(2).enumerate() {
            let is_out = li == widths.len() - 2;
            layers.push(MaskedDense {
                weight: Tensor::zeros(&[w[1], w[0]]),
                bias: Tensor::zeros(&[w[1]]),
                mask: masks[li].clone(),
                activation: if is_out { Activation::Identity } else { Activation::Tanh },
            });
        }
        MadeBlock { layers, dim, context_dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Glorot weights for hidden layers; the output heads remain zero.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter_mut().enumerate() {
            if li == last {
                continue;
            }
            let fan_in = layer.weight.shape()[1] as f64;
            let fan_out = layer.weight.shape()[0] as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for w in layer.weight.data_mut() {
                *w = rand::Rng::random_range(rng, -bound..bound);
            }
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> MadeBlockVars<'t> {
        MadeBlockVars {
            layers: self
                .layers
                .iter()
                .map(|l| BoundMasked {
                    weight: tape.leaf(l.weight.clone()),
                    bias: tape.leaf(l.bias.clone()),
                    mask: tape.leaf(l.mask.clone()),
                    activation: l.activation,
                })
                .collect(),
            dim: self.dim,
            context_dim: self.context_dim,
        }
    }
}

pub struct BoundMasked<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub mask: Var<'t>,
    pub activation: Activation,
}

pub struct MadeBlockVars<'t> {
    layers: Vec<BoundMasked<'t>>,
    dim: usize,
    context_dim: usize,
}

impl<'t> MadeBlockVars<'t> {
    /// Shift and bounded log-scale heads for a batch: `z` is `batch × d`,
    /// `c` (when the block is conditional) `batch × context_dim`.
    pub fn shift_and_log_scale(&self, z: Var<'t>, c: Option<Var<'t>>) -> (Var<'t>, Var<'t>) {
        assert_eq!(z.shape()[1], self.dim, "z dimension mismatch");
        let mut h = match c {
            Some(c) => {
                assert_eq!(c.shape()[1], self.context_dim, "context dimension mismatch");
                Var::concat(&[z, c])
            }
            None => {
                assert_eq!(self.context_dim, 0, "block expects a context input");
                z
            }
        };
        for layer in &self.layers {
            let masked = layer.weight.mul(layer.mask);
            h = layer.activation.apply(h.matmul(masked.transpose()).add_bias(layer.bias));
        }
        let shift = h.slice_cols(0, self.dim);
        let log_scale = h.slice_cols(self.dim, self.dim).tanh().scale(LOG_SCALE_BOUND);
        (shift, log_scale)
    }

    fn param_vars(&self, prefix: &str, out: &mut Vec<(String, Var<'t>)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), layer.weight));
            out.push((format!("{prefix}.{i}.bias"), layer.bias));
        }
    }
}

/// Context-conditioned flow: a base diagonal Gaussian whose parameters come
/// from an MLP on the context, composed with MADE blocks separated by
/// column reversals.
#[derive(Clone, Debug)]
pub struct FlowStack {
    pub blocks: Vec<MadeBlock>,
    /// Context → `(μ₀, log σ₀²)`, `2·d` wide.
    pub base_net: Mlp,
    dim: usize,
    context_dim: usize,
}

impl FlowStack {
    /// `n_blocks = 0` leaves just the conditional Gaussian base — the
    /// plain-Gaussian posterior used as an ablation.
    pub fn new(
        dim: usize,
        context_dim: usize,
        n_blocks: usize,
        made_hidden: &[usize],
        base_hidden: &[usize],
        mask_seed: u64,
    ) -> Self {
        let blocks = (0..n_blocks)
            .map(|k| MadeBlock::new(dim, context_dim, made_hidden, mask_seed.wrapping_add(k as u64)))
            .collect();
        let mut dims = vec![context_dim];
        dims.extend_from_slice(base_hidden);
        dims.push(2 * dim);
        FlowStack {
            blocks,
            base_net: Mlp::zeros(&dims, Activation::Tanh, Activation::Identity),
            dim,
            context_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    /// Glorot init for MADE hidden layers and the base net's hidden layers;
    /// every head stays zero so the fresh stack is the identity over a
    /// standard-normal base.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        for b in &mut self.blocks {
            b.init(rng);
        }
        self.base_net.init(rng);
        if let Some(last) = self.base_net.layers.last_mut() {
            last.weight = Tensor::zeros(&last.weight.shape().to_vec());
            last.bias = Tensor::zeros(&last.bias.shape().to_vec());
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> FlowStackVars<'t> {
        FlowStackVars {
            blocks: self.blocks.iter().map(|b| b.bind(tape)).collect(),
            base_net: self.base_net.bind(tape),
            dim: self.dim,
        }
    }

    /// Draws `n` samples per context row via sequential autoregressive
    /// generation. `c` is `batch × context_dim`; rows are expanded `n` times.
    /// Deterministic per `(seed, stream)`.
    pub fn sample(&self, c: &Tensor, n_per_row: usize, seed: u64, stream: u64) -> Tensor {
        let rows = c.shape()[0];
        let total = rows * n_per_row;
        let mut c_rep = Tensor::zeros(&[total, self.context_dim]);
        for i in 0..rows {
            for r in 0..n_per_row {
                let dst = (i * n_per_row + r) * self.context_dim;
                c_rep.data_mut()[dst..dst + self.context_dim]
                    .copy_from_slice(c.row(i));
            }
        }
        let mut rng = stream_rng(seed, stream);
        let (mu0, lv0) = self.base_params(&c_rep);
        let eps = normal_tensor(&[total, self.dim], &mut rng);
        let mut u = Tensor::zeros(&[total, self.dim]);
        for i in 0..total * self.dim {
            u.data_mut()[i] = mu0.data()[i] + (0.5 * lv0.data()[i]).exp() * eps.data()[i];
        }
        let (x, _) = self.generate(&u, &c_rep);
        x
    }

    /// Base-Gaussian parameters for each context row (value-only).
    pub fn base_params(&self, c: &Tensor) -> (Tensor, Tensor) {
        let out = self.base_net.forward_tensor(c);
        let rows = out.shape()[0];
        let mut mu = Tensor::zeros(&[rows, self.dim]);
        let mut lv = Tensor::zeros(&[rows, self.dim]);
        for i in 0..rows {
            mu.data_mut()[i * self.dim..(i + 1) * self.dim]
                .copy_from_slice(&out.row(i)[0..self.dim]);
            lv.data_mut()[i * self.dim..(i + 1) * self.dim]
                .copy_from_slice(&out.row(i)[self.dim..2 * self.dim]);
        }
        (mu, lv)
    }

    /// Maps base noise `u` through every block (value-only); returns the
    /// sample and the generation-direction log-determinant `+Σ a`.
    pub fn generate(&self, u: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let rows = u.shape()[0];
        let mut z = u.clone();
        let mut logdet = Tensor::zeros(&[rows]);
        for (k, block) in self.blocks.iter().enumerate() {
            if k > 0 {
                z = reverse_cols_tensor(&z);
            }
            let (x, a_final) = self.generate_block(block, &z, c);
            for i in 0..rows {
                logdet.data_mut()[i] += a_final.row(i).iter().sum::<f64>();
            }
            z = x;
        }
        (z, logdet)
    }

    fn generate_block(&self, block: &MadeBlock, u: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let rows = u.shape()[0];
        let mut x = Tensor::zeros(&[rows, self.dim]);
        let mut a_last = Tensor::zeros(&[rows, self.dim]);
        for i in 0..self.dim {
            // One masked pass per output dimension: dims < i are already
            // final in `x`, and the heads for dim i read nothing later. The
            // final pass therefore evaluates every head at the finished
            // sample, which is exactly the log-scale vector the
            // log-determinant needs.
            let tape = Tape::new();
            let bound = block.bind(&tape);
            let (m, a) = bound.shift_and_log_scale(
                tape.leaf(x.clone()),
                if self.context_dim > 0 { Some(tape.leaf(c.clone())) } else { None },
            );
            let m = m.value();
            let a = a.value();
            for r in 0..rows {
                let idx = r * self.dim + i;
                x.data_mut()[idx] = u.data()[idx] * a.data()[idx].exp() + m.data()[idx];
            }
            if i == self.dim - 1 {
                a_last = a;
            }
        }
        (x, a_last)
    }

    /// Value-only peel `x → u`, returning the density-direction
    /// log-determinant `−Σ a` alongside the base point.
    pub fn peel(&self, x: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let tape = Tape::new();
        let z = tape.leaf(x.clone());
        let cv = if self.context_dim > 0 { Some(tape.leaf(c.clone())) } else { None };
        let bound = self.bind(&tape);
        let (u, logdet) = bound.peel_vars(z, cv);
        (u.value(), logdet.value())
    }

}

fn reverse_cols_tensor(t: &Tensor) -> Tensor {
    let (m, n) = (t.shape()[0], t.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[i * n + j] = t.data()[i * n + (n - 1 - j)];
        }
    }
    out
}

impl Parametrized for FlowStack {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            for (i, l) in b.layers.iter().enumerate() {
                out.push((format!("block.{k}.{i}.weight"), &l.weight));
                out.push((format!("block.{k}.{i}.bias"), &l.bias));
                out.push((format!("block.{k}.{i}.mask"), &l.mask));
            }
        }
        for (name, t) in self.base_net.named_params() {
            out.push((format!("base.{name}"), t));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter_mut().enumerate() {
            for (i, l) in b.layers.iter_mut().enumerate() {
                out.push((format!("block.{k}.{i}.weight"), &mut l.weight));
                out.push((format!("block.{k}.{i}.bias"), &mut l.bias));
                out.push((format!("block.{k}.{i}.mask"), &mut l.mask));
            }
        }
        for (name, t) in self.base_net.named_params_mut() {
            out.push((format!("base.{name}"), t));
        }
        out
    }
}

pub struct FlowStackVars<'t> {
    blocks: Vec<MadeBlockVars<'t>>,
    base_net: MlpVars<'t>,
    dim: usize,
}

impl<'t> FlowStackVars<'t> {
    /// Peels every block (last to first), returning the base point and the
    /// accumulated density-direction log-determinant.
    fn peel_vars(&self, x: Var<'t>, c: Option<Var<'t>>) -> (Var<'t>, Var<'t>) {
        let rows = x.shape()[0];
        let tape = x.tape();
        let mut z = x;
        let mut logdet = tape.leaf(Tensor::zeros(&[rows]));
        for (k, block) in self.blocks.iter().enumerate().rev() {
            let (m, a) = block.shift_and_log_scale(z, c);
            z = z.sub(m).mul(a.neg().exp());
            logdet = logdet.sub(a.row_sum());
            if k > 0 {
                z = z.reverse_cols();
            }
        }
        (z, logdet)
    }

    /// `log q(z | c)`: base log-density at the peeled point minus the
    /// per-block log-scales.
    pub fn log_density(&self, z: Var<'t>, c: Option<Var<'t>>) -> Var<'t> {
        let (u, logdet) = self.peel_vars(z, c);
        let base = self.base(z.tape(), c, z.shape()[0]);
        base.log_density(u).add(logdet)
    }

    /// The context-conditioned base Gaussian; unconditional stacks fall back
    /// to a standard normal.
    pub fn base(&self, tape: &'t Tape, c: Option<Var<'t>>, batch: usize) -> DiagGaussian<'t> {
        match c {
            Some(c) => {
                let out = self.base_net.forward(c);
                DiagGaussian::new(
                    out.slice_cols(0, self.dim),
                    out.slice_cols(self.dim, self.dim),
                )
            }
            None => DiagGaussian::new(
                tape.leaf(Tensor::zeros(&[batch, self.dim])),
                tape.leaf(Tensor::zeros(&[batch, self.dim])),
            ),
        }
    }

    /// Trainable vars (masks excluded: they are structural constants).
    pub fn param_vars(&self, prefix: &str, out: &mut Vec<(String, Var<'t>)>) {
        for (k, b) in self.blocks.iter().enumerate() {
            b.param_vars(&format!("{prefix}.block.{k}"), out);
        }
        self.base_net.param_vars(&format!("{prefix}.base"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::stream_rng;

    fn fresh_stack(dim: usize, ctx: usize, blocks: usize, seed: u64) -> FlowStack {
        let mut f = FlowStack::new(dim, ctx, blocks, &[16, 16], &[16], 90 + seed);
        f.init(&mut stream_rng(seed, 0));
        f
    }

    /// Randomizes the output heads too, so the flow is a nontrivial map.
    fn randomized_stack(dim: usize, ctx: usize, blocks: usize, seed: u64) -> FlowStack {
        let mut f = fresh_stack(dim, ctx, blocks, seed);
        let mut rng = stream_rng(seed, 7);
        for b in &mut f.blocks {
            let last = b.layers.len() - 1;
            for w in b.layers[last].weight.data_mut() {
                *w = rand::Rng::random_range(&mut rng, -0.8..0.8);
            }
            for bias in b.layers[last].bias.data_mut() {
                *bias = rand::Rng::random_range(&mut rng, -0.5..0.5);
            }
        }
        if let Some(last) = f.base_net.layers.last_mut() {
            for w in last.weight.data_mut() {
                *w = rand::Rng::random_range(&mut rng, -0.5..0.5);
            }
        }
        f
    }

    #[test]
    fn masks_deterministic_per_seed() {
        let a = made_build_masks(&[8, 8], 3, 2, 42);
        let b = made_build_masks(&[8, 8], 3, 2, 42);
        let c = made_build_masks(&[8, 8], 3, 2, 43);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        assert!(a.iter().zip(&c).any(|(x, y)| x.data() != y.data()));
    }

    #[test]
    #[should_panic(expected = "cannot assign all degrees")]
    fn narrow_hidden_layer_rejected() {
        made_build_masks(&[2], 3, 0, 0);
    }

    #[test]
    fn dim_one_outputs_depend_only_on_context() {
        let mut block = MadeBlock::new(1, 3, &[8], 5);
        block.init(&mut stream_rng(5, 1));
        // Randomize the head so dependence would show if present.
        let last = block.layers.len() - 1;
        for w in block.layers[last].weight.data_mut() {
            *w = 0.37;
        }
        let c = Tensor::matrix(1, 3, vec![0.1, -0.2, 0.4]);
        let eval = |zv: f64| -> (f64, f64) {
            let tape = Tape::new();
            let bound = block.bind(&tape);
            let (m, a) = bound.shift_and_log_scale(
                tape.leaf(Tensor::matrix(1, 1, vec![zv])),
                Some(tape.leaf(c.clone())),
            );
            (m.value().data()[0], a.value().data()[0])
        };
        let (m0, a0) = eval(0.0);
        let (m1, a1) = eval(123.0);
        assert_eq!(m0, m1);
        assert_eq!(a0, a1);
    }

    #[test]
    fn jacobian_strictly_lower_triangular() {
        // d = 3: finite-difference Jacobian of both heads w.r.t. z must
        // vanish on and above the diagonal.
        let d = 3;
        let mut block = MadeBlock::new(d, 2, &[16, 16], 9);
        block.init(&mut stream_rng(9, 1));
        let last = block.layers.len() - 1;
        let mut rng = stream_rng(9, 2);
        for w in block.layers[last].weight.data_mut() {
            *w = rand::Rng::random_range(&mut rng, -0.5..0.5);
        }
        let c = Tensor::matrix(1, 2, vec![0.3, -0.7]);
        let z0 = Tensor::matrix(1, d, vec![0.2, -0.4, 0.9]);
        let eval = |z: &Tensor| -> Vec<f64> {
            let tape = Tape::new();
            let bound = block.bind(&tape);
            let (m, a) = bound.shift_and_log_scale(tape.leaf(z.clone()), Some(tape.leaf(c.clone())));
            let mut out = m.value().data().to_vec();
            out.extend_from_slice(a.value().data());
            out
        };
        let h = 1e-6;
        for j in 0..d {
            let mut zp = z0.clone();
            zp.data_mut()[j] += h;
            let mut zm = z0.clone();
            zm.data_mut()[j] -= h;
            let fp = eval(&zp);
            let fm = eval(&zm);
            for (row, (p, m)) in fp.iter().zip(fm.iter()).enumerate() {
                let deriv = (p - m) / (2.0 * h);
                let out_dim = row % d;
                if j >= out_dim {
                    assert!(
                        deriv.abs() < 1e-8,
                        "output {out_dim} depends on input {j}: {deriv}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_initialized_stack_is_identity_with_zero_logdet() {
        let flow = FlowStack::new(2, 3, 2, &[8], &[8], 1);
        let tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.3]));
        let c = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let bound = flow.bind(&tape);
        let lp = bound.log_density(z, Some(c)).value();
        // With zero heads the density is exactly the standard-normal base.
        let base = DiagGaussian::new(
            tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4])),
            tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4])),
        );
        let expect = base.log_density(z).value();
        assert_eq!(lp.data(), expect.data());
        let (_, logdet) = flow.peel(&z.value(), &c.value());
        assert!(logdet.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_block_logdet() {
        // d = 1, no hidden layers, no context: the block reduces to
        // x = s·u + b, whose density-direction log-det is −ln s.
        let s: f64 = 2.0;
        let b = 0.5;
        let mut block = MadeBlock::new(1, 0, &[], 0);
        let a_raw = (s.ln() / LOG_SCALE_BOUND).atanh();
        block.layers[0].bias = Tensor::vector(vec![b, a_raw]);
        let flow = FlowStack { blocks: vec![block], base_net: Mlp::identity(0), dim: 1, context_dim: 0 };
        let x = Tensor::matrix(1, 1, vec![1.7]);
        let (u, logdet) = {
            let tape = Tape::new();
            let bound = flow.bind(&tape);
            let (u, ld) = bound.peel_vars(tape.leaf(x.clone()), None);
            (u.value(), ld.value())
        };
        assert!((u.data()[0] - (1.7 - b) / s).abs() < 1e-12);
        assert!((logdet.data()[0] + s.ln()).abs() < 1e-12);
    }

    #[test]
    fn peel_then_regenerate_round_trips() {
        let flow = randomized_stack(3, 2, 2, 21);
        let mut rng = stream_rng(21, 3);
        for _ in 0..1000 {
            let z = normal_tensor(&[1, 3], &mut rng).map(|v| v * 2.0);
            let c = normal_tensor(&[1, 2], &mut rng);
            let (u, _) = flow.peel(&z, &c);
            let (z_back, _) = flow.generate(&u, &c);
            assert!(
                z.max_abs_diff(&z_back) < 1e-8,
                "round trip error {}",
                z.max_abs_diff(&z_back)
            );
        }
    }

    #[test]
    fn logdet_antisymmetry() {
        let flow = randomized_stack(4, 2, 3, 33);
        let mut rng = stream_rng(33, 4);
        let z = normal_tensor(&[5, 4], &mut rng);
        let c = normal_tensor(&[5, 2], &mut rng);
        let (u, logdet_density) = flow.peel(&z, &c);
        let (_, logdet_gen) = flow.generate(&u, &c);
        for i in 0..5 {
            assert!(
                (logdet_density.data()[i] + logdet_gen.data()[i]).abs() < 1e-10,
                "antisymmetry violated: {} vs {}",
                logdet_density.data()[i],
                logdet_gen.data()[i]
            );
        }
    }

    #[test]
    fn identity_stack_samples_follow_base() {
        // Zero heads: samples are exactly the standard-normal base. Moment
        // test over 10⁵ draws at the 3σ level.
        let flow = FlowStack::new(2, 1, 2, &[8], &[8], 2);
        let c = Tensor::matrix(1, 1, vec![0.4]);
        let n = 100_000;
        let z = flow.sample(&c, n, 11, 0);
        for dim in 0..2 {
            let vals: Vec<f64> = (0..n).map(|i| z.data()[i * 2 + dim]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
            // Var(sample variance) ≈ 2/n for a standard normal.
            assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "var {var}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let flow = randomized_stack(2, 2, 2, 44);
        let c = Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.5, 0.0, -0.1]);
        let a = flow.sample(&c, 4, 9, 1);
        let b = flow.sample(&c, 4, 9, 1);
        let other = flow.sample(&c, 4, 10, 1);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), other.data());
    }

    #[test]
    fn round_trip_density_is_finite() {
        let flow = randomized_stack(2, 2, 2, 55);
        let c = Tensor::matrix(2, 2, vec![0.3, -0.2, 0.8, 0.1]);
        let z = flow.sample(&c, 1, 3, 0);
        let tape = Tape::new();
        let bound = flow.bind(&tape);
        let lp = bound
            .log_density(tape.leaf(z), Some(tape.leaf(c)))
            .value();
        assert!(lp.is_finite());
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        // Gradients w.r.t. every flow parameter at relative error < 1e-4.
        let flow = randomized_stack(2, 2, 2, 66);
        let z_t = normal_tensor(&[3, 2], &mut stream_rng(66, 5));
        let c_t = normal_tensor(&[3, 2], &mut stream_rng(66, 6));

        let named: Vec<(String, Tensor)> = flow
            .named_params()
            .into_iter()
            .filter(|(n, _)| !n.contains("mask"))
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let inputs: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
        let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();

        let err = gradcheck::max_relative_error(&inputs, 1e-6, |tape, vars| {
            let bound = bind_with_vars(&flow, tape, vars, &names);
            let z = tape.leaf(z_t.clone());
            let c = tape.leaf(c_t.clone());
            gradcheck::NodeLoss::of(bound.log_density(z, Some(c)).sum())
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    /// Binds `flow` onto `tape` but substitutes the provided vars for the
    /// trainable parameters (order matches `names`); masks stay constants.
    fn bind_with_vars<'t>(
        flow: &FlowStack,
        tape: &'t Tape,
        vars: &[Var<'t>],
        names: &[String],
    ) -> FlowStackVars<'t> {
        let lookup = |name: &str| -> Var<'t> {
            let idx = names.iter().position(|n| n == name).expect("param name");
            vars[idx]
        };
        let blocks = flow
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| MadeBlockVars {
                layers: b
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| BoundMasked {
                        weight: lookup(&format!("block.{k}.{i}.weight")),
                        bias: lookup(&format!("block.{k}.{i}.bias")),
                        mask: tape.leaf(l.mask.clone()),
                        activation: l.activation,
                    })
                    .collect(),
                dim: b.dim,
                context_dim: b.context_dim,
            })
            .collect();
        let base_layers = flow
            .base_net
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| crate::nn::BoundLayer {
                weight: lookup(&format!("base.{i}.weight")),
                bias: lookup(&format!("base.{i}.bias")),
                activation: l.activation,
            })
            .collect();
        FlowStackVars {
            blocks,
            base_net: crate::nn::MlpVars::from_parts(
                base_layers,
                flow.base_net.input_dim(),
                flow.base_net.output_dim(),
            ),
            dim: flow.dim,
        }
    }
}
