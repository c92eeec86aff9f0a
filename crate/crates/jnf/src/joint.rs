//! Stage 1: the joint variational autoencoder.
//!
//! A multi-head encoder reads every modality, concatenates per-modality
//! features and emits a diagonal Gaussian over the shared latent code; one
//! decoder per modality maps the code back to observation parameters. The
//! training loss is the negated evidence lower bound with a `β`-weighted KL
//! term and per-modality likelihood rescaling weights `λ_j`:
//!
//! ```text
//! loss(X) = −Σ_j λ_j·E_q[log p(x_j|z)] + β·KL(q(z|X) ‖ N(0, I))
//! ```
//!
//! with the expectation estimated by a single reparameterized sample.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dist::{bernoulli_log_likelihood, gaussian_log_likelihood, DiagGaussian, StandardNormalPrior};
use crate::nn::{collect_grads, Activation, Adam, Mlp, MlpVars, Parametrized};
use crate::rng::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::toy::ShapeSample;

/// Observation model attached to each decoder head.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Likelihood {
    /// Decoder emits pixel probabilities (sigmoid head).
    Bernoulli,
    /// Decoder emits the mean of a fixed-variance Gaussian.
    Gaussian { log_var: f64 },
}

/// Aligned batch: one `batch × dim_j` tensor per modality.
pub struct MultimodalData {
    pub modalities: Vec<Tensor>,
    n: usize,
}

impl MultimodalData {
    pub fn new(modalities: Vec<Tensor>) -> Self {
        assert!(!modalities.is_empty(), "at least one modality required");
        let n = modalities[0].shape()[0];
        for m in &modalities {
            assert_eq!(m.shape()[0], n, "modalities must be aligned");
        }
        MultimodalData { modalities, n }
    }

    pub fn from_toy(samples: &[ShapeSample]) -> Self {
        MultimodalData::new(vec![
            crate::toy::batch_images(samples, 0),
            crate::toy::batch_images(samples, 1),
        ])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.shape()[1]).collect()
    }

    /// Gathers the given rows into a fresh batch per modality.
    pub fn gather(&self, idx: &[usize]) -> Vec<Tensor> {
        self.modalities
            .iter()
            .map(|m| {
                let d = m.shape()[1];
                let mut out = Tensor::zeros(&[idx.len(), d]);
                for (row, &i) in idx.iter().enumerate() {
                    out.data_mut()[row * d..(row + 1) * d].copy_from_slice(m.row(i));
                }
                out
            })
            .collect()
    }
}

/// Joint VAE: per-modality encoder heads, a trunk emitting the posterior
/// parameters, per-modality decoders, a standard-normal prior, and the
/// `β`/`λ` weights.
#[derive(Clone)]
pub struct JointVae {
    pub heads: Vec<Mlp>,
    /// Concatenated head features → `2·d_z` (μ then log σ²).
    pub trunk: Mlp,
    pub decoders: Vec<Mlp>,
    pub likelihoods: Vec<Likelihood>,
    pub prior: StandardNormalPrior,
    pub beta: f64,
    pub lambdas: Vec<f64>,
    d_z: usize,
}

/// Shape of the joint model; defaults mirror the toy pipeline.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct JointVaeSpec {
    pub modality_dims: Vec<usize>,
    pub d_z: usize,
    pub beta: f64,
    pub lambdas: Vec<f64>,
    pub head_hidden: Vec<usize>,
    /// Hidden widths of the merge trunk; empty means plain concatenation
    /// straight into the linear posterior layer.
    pub trunk_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub likelihoods: Vec<Likelihood>,
}

impl JointVaeSpec {
    pub fn toy_default(d_z: usize, beta: f64) -> Self {
        JointVaeSpec {
            modality_dims: vec![crate::toy::IMAGE_PIXELS; 2],
            d_z,
            beta,
            lambdas: vec![1.0; 2],
            head_hidden: vec![256, 256],
            trunk_hidden: vec![512, 512],
            decoder_hidden: vec![256, 256],
            likelihoods: vec![Likelihood::Bernoulli; 2],
        }
    }
}

impl JointVae {
    pub fn new(spec: &JointVaeSpec) -> Self {
        let m = spec.modality_dims.len();
        assert_eq!(spec.lambdas.len(), m, "one λ per modality");
        assert_eq!(spec.likelihoods.len(), m, "one likelihood per modality");
        assert!(spec.beta > 0.0 || spec.beta == 0.0, "β must be nonnegative");
        let heads: Vec<Mlp> = spec
            .modality_dims
            .iter()
            .map(|&dim| {
                if spec.head_hidden.is_empty() {
                    Mlp::identity(dim)
                } else {
                    let mut dims = vec![dim];
                    dims.extend_from_slice(&spec.head_hidden);
                    Mlp::zeros(&dims, Activation::Tanh, Activation::Tanh)
                }
            })
            .collect();
        let concat_dim: usize = heads.iter().map(|h| h.output_dim()).sum();
        let mut trunk_dims = vec![concat_dim];
        trunk_dims.extend_from_slice(&spec.trunk_hidden);
        trunk_dims.push(2 * spec.d_z);
        let trunk = Mlp::zeros(&trunk_dims, Activation::Tanh, Activation::Identity);
        let decoders = spec
            .modality_dims
            .iter()
            .zip(&spec.likelihoods)
            .map(|(&dim, lik)| {
                let mut dims = vec![spec.d_z];
                dims.extend_from_slice(&spec.decoder_hidden);
                dims.push(dim);
                let out_act = match lik {
                    Likelihood::Bernoulli => Activation::Sigmoid,
                    Likelihood::Gaussian { .. } => Activation::Identity,
                };
                Mlp::zeros(&dims, Activation::Tanh, out_act)
            })
            .collect();
        JointVae {
            heads,
            trunk,
            decoders,
            likelihoods: spec.likelihoods.clone(),
            prior: StandardNormalPrior::new(spec.d_z),
            beta: spec.beta,
            lambdas: spec.lambdas.clone(),
            d_z: spec.d_z,
        }
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn n_modalities(&self) -> usize {
        self.decoders.len()
    }

    pub fn init(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, 0);
        for h in &mut self.heads {
            h.init(&mut rng);
        }
        self.trunk.init(&mut rng);
        for d in &mut self.decoders {
            d.init(&mut rng);
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> JointVaeVars<'t> {
        JointVaeVars {
            heads: self.heads.iter().map(|h| h.bind(tape)).collect(),
            trunk: self.trunk.bind(tape),
            decoders: self.decoders.iter().map(|d| d.bind(tape)).collect(),
            likelihoods: self.likelihoods.clone(),
            beta: self.beta,
            lambdas: self.lambdas.clone(),
            d_z: self.d_z,
        }
    }

    /// Posterior parameters for a full batch without gradient tracking.
    pub fn encode_tensor(&self, xs: &[Tensor]) -> (Tensor, Tensor) {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let g = self.bind(&tape).encode(&vars);
        (g.mu.value(), g.log_var.value())
    }

    /// Decoder outputs (probabilities or means) without gradient tracking.
    pub fn decode_tensor(&self, z: &Tensor) -> Vec<Tensor> {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        self.bind(&tape).decode(zv).into_iter().map(|v| v.value()).collect()
    }
}

impl Parametrized for JointVae {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (j, h) in self.heads.iter().enumerate() {
            for (n, t) in h.named_params() {
                out.push((format!("head.{j}.{n}"), t));
            }
        }
        for (n, t) in self.trunk.named_params() {
            out.push((format!("trunk.{n}"), t));
        }
        for (j, d) in self.decoders.iter().enumerate() {
            for (n, t) in d.named_params() {
                out.push((format!("decoder.{j}.{n}"), t));
            }
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (j, h) in self.heads.iter_mut().enumerate() {
            for (n, t) in h.named_params_mut() {
                out.push((format!("head.{j}.{n}"), t));
            }
        }
        for (n, t) in self.trunk.named_params_mut() {
            out.push((format!("trunk.{n}"), t));
        }
        for (j, d) in self.decoders.iter_mut().enumerate() {
            for (n, t) in d.named_params_mut() {
                out.push((format!("decoder.{j}.{n}"), t));
            }
        }
        out
    }
}

pub struct JointVaeVars<'t> {
    pub heads: Vec<MlpVars<'t>>,
    pub trunk: MlpVars<'t>,
    pub decoders: Vec<MlpVars<'t>>,
    likelihoods: Vec<Likelihood>,
    beta: f64,
    lambdas: Vec<f64>,
    d_z: usize,
}

impl<'t> JointVaeVars<'t> {
    /// Joint posterior `q(z|X)`; every modality must be present.
    pub fn encode(&self, xs: &[Var<'t>]) -> DiagGaussian<'t> {
        assert_eq!(
            xs.len(),
            self.heads.len(),
            "joint encoding needs all {} modalities",
            self.heads.len()
        );
        let features: Vec<Var<'t>> =
            self.heads.iter().zip(xs).map(|(h, &x)| h.forward(x)).collect();
        let merged = if features.len() == 1 {
            features[0]
        } else {
            Var::concat(&features)
        };
        let out = self.trunk.forward(merged);
        DiagGaussian::new(
            out.slice_cols(0, self.d_z),
            out.slice_cols(self.d_z, self.d_z),
        )
    }

    /// Per-modality decoder outputs for a latent batch.
    pub fn decode(&self, z: Var<'t>) -> Vec<Var<'t>> {
        self.decoders.iter().map(|d| d.forward(z)).collect()
    }

    /// Per-modality log-likelihood rows for observed `xs` at latent `z`.
    pub fn log_likelihoods(&self, z: Var<'t>, xs: &[Var<'t>]) -> Vec<Var<'t>> {
        let outs = self.decode(z);
        outs.iter()
            .zip(xs)
            .zip(&self.likelihoods)
            .map(|((&out, &x), lik)| match lik {
                Likelihood::Bernoulli => bernoulli_log_likelihood(out, x),
                Likelihood::Gaussian { log_var } => gaussian_log_likelihood(out, x, *log_var),
            })
            .collect()
    }

    pub fn param_vars(&self) -> Vec<(String, Var<'t>)> {
        let mut out = Vec::new();
        for (j, h) in self.heads.iter().enumerate() {
            h.param_vars(&format!("head.{j}"), &mut out);
        }
        self.trunk.param_vars("trunk", &mut out);
        for (j, d) in self.decoders.iter().enumerate() {
            d.param_vars(&format!("decoder.{j}"), &mut out);
        }
        out
    }
}

/// Loss components of one step, as plain numbers for tracing.
#[derive(Clone, Debug)]
pub struct ElboParts {
    /// Mean reconstruction log-likelihood per modality (unweighted).
    pub recon: Vec<f64>,
    /// Mean KL to the prior.
    pub kl: f64,
    /// Mean total loss (what the optimizer sees).
    pub total: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value in the {term} term at epoch {epoch}")]
    NonFinite { term: String, epoch: usize },
    #[error(transparent)]
    Optim(#[from] crate::nn::OptimError),
}

/// Negated β-ELBO over a batch: single reparameterized sample, differentiable
/// in every encoder and decoder parameter.
pub fn beta_elbo<'t>(
    model: &JointVaeVars<'t>,
    xs: &[Var<'t>],
    rng: &mut ChaCha8Rng,
) -> (Var<'t>, ElboParts) {
    let posterior = model.encode(xs);
    let z = posterior.sample(rng);
    let lls = model.log_likelihoods(z, xs);
    let tape = z.tape();
    let prior = StandardNormalPrior::new(model.d_z).bind(tape, z.shape()[0]);
    let kl = posterior.kl(&prior);

    let mut weighted = kl.scale(model.beta);
    for (ll, &lambda) in lls.iter().zip(&model.lambdas) {
        weighted = weighted.sub(ll.scale(lambda));
    }
    let loss = weighted.mean();
    let parts = ElboParts {
        recon: lls
            .iter()
            .map(|ll| {
                let v = ll.value();
                v.data().iter().sum::<f64>() / v.numel() as f64
            })
            .collect(),
        kl: {
            let v = kl.value();
            v.data().iter().sum::<f64>() / v.numel() as f64
        },
        total: loss.value().scalar_value(),
    };
    (loss, parts)
}

#[derive(Clone, Debug)]
pub struct JointTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Per-epoch means of the loss components.
#[derive(Clone, Debug)]
pub struct EpochTrace {
    pub epoch: usize,
    pub recon: Vec<f64>,
    pub kl: f64,
    pub total: f64,
}

/// Adam on the negated β-ELBO. Deterministic per seed: batch order, noise
/// draws and updates are all keyed off `cfg.seed`. On divergence the model
/// from the last completed epoch is returned inside the error.
pub fn train_joint(
    mut model: JointVae,
    data: &MultimodalData,
    cfg: &JointTrainConfig,
) -> Result<(JointVae, Vec<EpochTrace>), Box<TrainError>> {
    let mut opt = Adam::new(cfg.learning_rate);
    let mut trace = Vec::new();
    let mut noise_rng = stream_rng(cfg.seed, 1);
    let mut last_valid = model.clone();

    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, 1000 + epoch as u64);
        let mut sums = EpochAccumulator::new(model.n_modalities());
        for batch_idx in order.chunks(cfg.batch_size) {
            let xs_t = data.gather(batch_idx);
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let xs: Vec<Var<'_>> = xs_t.iter().map(|x| tape.leaf(x.clone())).collect();
            let (loss, parts) = beta_elbo(&bound, &xs, &mut noise_rng);
            if !parts.total.is_finite() {
                let term = diverged_term(&parts);
                return Err(Box::new(TrainError::NonFinite { term, epoch }));
            }
            let grads = tape.backward(loss);
            let named = bound.param_vars();
            let grad_map = collect_grads(&grads, &named);
            opt.step(model.named_params_mut(), &grad_map)
                .map_err(|e| Box::new(TrainError::from(e)))?;
            sums.add(&parts, batch_idx.len());
        }
        trace.push(sums.finish(epoch));
        last_valid = model.clone();
    }
    let _ = last_valid;
    Ok((model, trace))
}

struct EpochAccumulator {
    recon: Vec<f64>,
    kl: f64,
    total: f64,
    n: usize,
}

impl EpochAccumulator {
    fn new(m: usize) -> Self {
        EpochAccumulator { recon: vec![0.0; m], kl: 0.0, total: 0.0, n: 0 }
    }

    fn add(&mut self, parts: &ElboParts, batch: usize) {
        for (acc, r) in self.recon.iter_mut().zip(&parts.recon) {
            *acc += r * batch as f64;
        }
        self.kl += parts.kl * batch as f64;
        self.total += parts.total * batch as f64;
        self.n += batch;
    }

    fn finish(self, epoch: usize) -> EpochTrace {
        let n = self.n as f64;
        EpochTrace {
            epoch,
            recon: self.recon.iter().map(|r| r / n).collect(),
            kl: self.kl / n,
            total: self.total / n,
        }
    }
}

fn diverged_term(parts: &ElboParts) -> String {
    if !parts.kl.is_finite() {
        return "kl".to_string();
    }
    for (j, r) in parts.recon.iter().enumerate() {
        if !r.is_finite() {
            return format!("recon_{j}");
        }
    }
    "total".to_string()
}

/// Fisher–Yates permutation keyed by `(seed, stream)`.
pub fn shuffled_indices(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, stream));
    idx
}

/// `epoch,recon_0,recon_1,...,kl,total` rows.
pub fn write_loss_trace_csv(trace: &[EpochTrace], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = trace.first().map(|t| t.recon.len()).unwrap_or(0);
    let headers: Vec<String> = (0..m).map(|j| format!("recon_{j}")).collect();
    writeln!(w, "epoch,{},kl,total", headers.join(","))?;
    for t in trace {
        let recon: Vec<String> = t.recon.iter().map(|r| format!("{r}")).collect();
        writeln!(w, "{},{},{},{}", t.epoch, recon.join(","), t.kl, t.total)?;
    }
    Ok(())
}

/// `z1,z2,class,square_width` rows of encoded means for two-dimensional
/// latents.
pub fn write_latent_scatter_csv(
    model: &JointVae,
    samples: &[ShapeSample],
    path: &std::path::Path,
) -> std::io::Result<()> {
    use std::io::Write;
    assert_eq!(model.d_z(), 2, "latent scatter is defined for d_z = 2");
    let data = MultimodalData::from_toy(samples);
    let (mu, _) = model.encode_tensor(&data.modalities);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "z1,z2,class,square_width")?;
    for (i, s) in samples.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            mu.data()[i * 2],
            mu.data()[i * 2 + 1],
            s.shape_class,
            s.square_width
        )?;
    }
    Ok(())
}
