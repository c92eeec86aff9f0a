//! Cross-modal projector pretraining.
//!
//! Projectors `g_j` map each modality to a shared `k`-dimensional embedding
//! trained so that embeddings of paired observations look alike. Two
//! objectives are provided: deep CCA (maximize the total canonical
//! correlation between embedding batches) and a symmetric contrastive loss
//! over exponential cosine similarities. Trained projectors are frozen and
//! consumed by the stage-2 posteriors that condition on shared information.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::joint::{shuffled_indices, MultimodalData};
use crate::linalg;
use crate::nn::{collect_grads, Activation, Adam, Mlp, Parametrized};
use crate::rng::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::{matmul_nn, matmul_tn, Tensor};

/// Minimum eigenvalue gap below which extra jitter is added before the
/// eigendecomposition (the eigenvalue-gradient formula blows up on repeated
/// eigenvalues).
const SPECTRUM_GAP: f64 = 1e-9;
const SPECTRUM_JITTER: f64 = 1e-8;
/// Floor inside the singular-value square root; keeps the gradient finite
/// when a canonical direction carries no correlation.
const SV_FLOOR: f64 = 1e-12;

/// Differentiable total canonical correlation between two embedding batches
/// (`batch × k` each): embeddings are centered, covariances regularized with
/// `eps_cov·I`, and the singular values of `Σ₁^{-1/2} Σ₁₂ Σ₂^{-1/2}` are
/// clamped to 1 and summed.
pub fn dcca_total_correlation<'t>(e1: Var<'t>, e2: Var<'t>, eps_cov: f64) -> Var<'t> {
    let shape = e1.shape();
    assert_eq!(shape, e2.shape(), "embedding batches must match");
    let (batch, k) = (shape[0], shape[1]);
    assert!(batch > k, "batch {batch} must exceed embedding dimension {k}");
    let tape = e1.tape();

    let center = |e: Var<'t>| -> Var<'t> {
        let ones = tape.leaf(Tensor::matrix(1, batch, vec![1.0 / batch as f64; batch]));
        let mean = ones.matmul(e).reshape(vec![k]);
        e.add_bias(mean.neg().reshape(vec![k]))
    };
    let c1 = center(e1);
    let c2 = center(e2);

    let norm = 1.0 / (batch as f64 - 1.0);
    let cov = |a: Var<'t>, b: Var<'t>| a.transpose().matmul(b).scale(norm);
    let jitter = |m: Var<'t>| -> Var<'t> {
        // Degenerate-spectrum guard: widen the regularizer when eigenvalues
        // nearly collide.
        let raw = m.value();
        let (vals, _) = linalg::sym_eig(raw.data(), k);
        let min_gap = vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let eps = if k > 1 && min_gap < SPECTRUM_GAP { eps_cov + SPECTRUM_JITTER } else { eps_cov };
        m.add(tape.leaf(Tensor::eye(k)).scale(eps))
    };
    let sigma1 = jitter(cov(c1, c1));
    let sigma2 = jitter(cov(c2, c2));
    let sigma12 = cov(c1, c2);

    let t = sigma1.spd_inv_sqrt().matmul(sigma12).matmul(sigma2.spd_inv_sqrt());
    let gram = t.transpose().matmul(t);
    let eigvals = gram.sym_eigvals();
    let singular = eigvals.relu().add_scalar(SV_FLOOR).sqrt();
    // Σ min(σ, 1) = Σ σ − Σ relu(σ − 1).
    singular.sum().sub(singular.add_scalar(-1.0).relu().sum())
}

/// Canonical correlations (descending, unclamped) of two embedding batches —
/// the per-direction report companion to [`dcca_total_correlation`].
pub fn canonical_correlations(e1: &Tensor, e2: &Tensor, eps_cov: f64) -> Vec<f64> {
    let (batch, k) = (e1.shape()[0], e1.shape()[1]);
    assert_eq!(e1.shape(), e2.shape(), "embedding batches must match");
    assert!(batch > k, "batch must exceed embedding dimension");
    let centered = |e: &Tensor| -> Tensor {
        let mut means = vec![0.0; k];
        for row in e.data().chunks_exact(k) {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= batch as f64;
        }
        let mut out = e.clone();
        for row in out.data_mut().chunks_exact_mut(k) {
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    };
    let c1 = centered(e1);
    let c2 = centered(e2);
    let norm = 1.0 / (batch as f64 - 1.0);
    let cov = |a: &Tensor, b: &Tensor, reg: f64| -> Vec<f64> {
        let mut out = vec![0.0; k * k];
        matmul_tn(a.data(), b.data(), k, batch, k, &mut out);
        for v in out.iter_mut() {
            *v *= norm;
        }
        for i in 0..k {
            out[i * k + i] += reg;
        }
        out
    };
    let s1 = cov(&c1, &c1, eps_cov);
    let s2 = cov(&c2, &c2, eps_cov);
    let s12 = cov(&c1, &c2, 0.0);
    let s1_inv_sqrt = linalg::sym_matrix_function(&s1, k, |v| 1.0 / v.sqrt());
    let s2_inv_sqrt = linalg::sym_matrix_function(&s2, k, |v| 1.0 / v.sqrt());
    let mut tmp = vec![0.0; k * k];
    matmul_nn(&s1_inv_sqrt, &s12, k, k, k, &mut tmp);
    let mut t = vec![0.0; k * k];
    matmul_nn(&tmp, &s2_inv_sqrt, k, k, k, &mut t);
    let mut gram = vec![0.0; k * k];
    matmul_tn(&t, &t, k, k, k, &mut gram);
    let (vals, _) = linalg::sym_eig(&gram, k);
    let mut sv: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    sv.reverse();
    sv
}

/// Symmetric contrastive loss over a batch of `K` positive pairs:
/// `Σ_i −log softmax_row(S)_ii − log softmax_col(S)_ii` with
/// `S_ij = cos(e1_i, e2_j)/τ`. Identical embeddings give `2K·log K`.
pub fn infonce_loss<'t>(e1: Var<'t>, e2: Var<'t>, tau: f64) -> Var<'t> {
    assert!(tau > 0.0, "temperature must be positive");
    let shape = e1.shape();
    assert_eq!(shape, e2.shape(), "embedding batches must match");
    let big_k = shape[0];
    assert!(big_k >= 2, "contrastive batches need at least two pairs");
    let tape = e1.tape();

    let normalize = |e: Var<'t>| -> Var<'t> {
        let norms = e.mul(e).row_sum().add_scalar(SV_FLOOR * SV_FLOOR).sqrt();
        e.scale_rows(norms.recip())
    };
    let n1 = normalize(e1);
    let n2 = normalize(e2);
    let sims = n1.matmul(n2.transpose()).scale(1.0 / tau);

    let eye = tape.leaf(Tensor::eye(big_k));
    let direction = |s: Var<'t>| -> Var<'t> {
        let lse = s.exp().row_sum().log();
        let diag = s.mul(eye).row_sum();
        lse.sub(diag).sum()
    };
    direction(sims).add(direction(sims.transpose()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProjectorMethod {
    Dcca,
    Contrastive,
}

impl std::fmt::Display for ProjectorMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProjectorMethod::Dcca => write!(f, "dcca"),
            ProjectorMethod::Contrastive => write!(f, "cl"),
        }
    }
}

/// Frozen product of projector training: one embedding network per modality.
#[derive(Clone)]
pub struct ProjectorSet {
    pub projectors: Vec<Mlp>,
    pub method: ProjectorMethod,
    pub k: usize,
}

impl ProjectorSet {
    pub fn project(&self, modality: usize, x: &Tensor) -> Tensor {
        self.projectors[modality].forward_tensor(x)
    }
}

impl Parametrized for ProjectorSet {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (j, p) in self.projectors.iter().enumerate() {
            for (n, t) in p.named_params() {
                out.push((format!("proj.{j}.{n}"), t));
            }
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (j, p) in self.projectors.iter_mut().enumerate() {
            for (n, t) in p.named_params_mut() {
                out.push((format!("proj.{j}.{n}"), t));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ProjectorTrainConfig {
    pub method: ProjectorMethod,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Covariance regularization (DCCA only).
    pub eps_cov: f64,
    /// Softmax temperature (contrastive only).
    pub tau: f64,
    pub hidden: Vec<usize>,
}

impl ProjectorTrainConfig {
    pub fn toy_default(method: ProjectorMethod, seed: u64) -> Self {
        ProjectorTrainConfig {
            method,
            k: 10,
            epochs: 6,
            batch_size: 256,
            learning_rate: 1e-3,
            seed,
            eps_cov: 1e-4,
            tau: 0.1,
            hidden: vec![256, 256, 256],
        }
    }
}

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("batch size {batch} must exceed the projection dimension {k} for DCCA")]
    BatchTooSmall { batch: usize, k: usize },
    #[error(transparent)]
    Optim(#[from] crate::nn::OptimError),
    #[error("non-finite projector loss at epoch {0}")]
    NonFinite(usize),
}

/// Joint training of all projectors; pairwise objectives are summed when
/// more than two modalities are present. Deterministic per seed.
pub fn train_projectors(
    data: &MultimodalData,
    cfg: &ProjectorTrainConfig,
) -> Result<(ProjectorSet, Vec<f64>), ProjectorError> {
    if cfg.method == ProjectorMethod::Dcca && cfg.batch_size <= cfg.k {
        return Err(ProjectorError::BatchTooSmall { batch: cfg.batch_size, k: cfg.k });
    }
    let mut rng = stream_rng(cfg.seed, 0);
    let mut projectors: Vec<Mlp> = data
        .dims()
        .iter()
        .map(|&dim| {
            let mut dims = vec![dim];
            dims.extend_from_slice(&cfg.hidden);
            dims.push(cfg.k);
            let mut mlp = Mlp::zeros(&dims, Activation::Tanh, Activation::Identity);
            mlp.init(&mut rng);
            mlp
        })
        .collect();

    let mut opt = Adam::new(cfg.learning_rate);
    let mut trace = Vec::new();
    let m = data.n_modalities();
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, 500 + epoch as u64);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            // Short tail batches break the batch > k precondition and carry
            // little signal; skip them.
            if batch_idx.len() < cfg.batch_size {
                continue;
            }
            let xs = data.gather(batch_idx);
            let tape = Tape::new();
            let mut named: Vec<(String, Var<'_>)> = Vec::new();
            let embeddings: Vec<Var<'_>> = projectors
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let bound = p.bind(&tape);
                    bound.param_vars(&format!("proj.{j}"), &mut named);
                    bound.forward(tape.leaf(xs[j].clone()))
                })
                .collect();
            let mut loss: Option<Var<'_>> = None;
            for i in 0..m {
                for j in (i + 1)..m {
                    let pair = match cfg.method {
                        ProjectorMethod::Dcca => {
                            dcca_total_correlation(embeddings[i], embeddings[j], cfg.eps_cov).neg()
                        }
                        ProjectorMethod::Contrastive => {
                            infonce_loss(embeddings[i], embeddings[j], cfg.tau)
                                .scale(1.0 / batch_idx.len() as f64)
                        }
                    };
                    loss = Some(match loss {
                        Some(l) => l.add(pair),
                        None => pair,
                    });
                }
            }
            let loss = loss.expect("at least two modalities");
            let value = loss.value().scalar_value();
            if !value.is_finite() {
                return Err(ProjectorError::NonFinite(epoch));
            }
            let grads = tape.backward(loss);
            let grad_map: BTreeMap<String, Tensor> = collect_grads(&grads, &named);
            let mut params: Vec<(String, &mut Tensor)> = Vec::new();
            for (j, p) in projectors.iter_mut().enumerate() {
                for (n, t) in p.named_params_mut() {
                    params.push((format!("proj.{j}.{n}"), t));
                }
            }
            opt.step(params, &grad_map)?;
            epoch_loss += value;
            batches += 1;
        }
        trace.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((ProjectorSet { projectors, method: cfg.method, k: cfg.k }, trace))
}
