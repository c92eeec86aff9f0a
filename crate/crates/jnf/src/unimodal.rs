//! Stage 2: per-modality posteriors fitted to the frozen joint encoder.
//!
//! With the stage-1 model frozen, a latent `z` is drawn from the joint
//! posterior for each training pair and every per-modality posterior
//! `q_j(z | c_j)` is trained to assign it high density:
//!
//! ```text
//! loss(X) = −Σ_j E_{q(z|X)}[ log q_j(z | c_j) ]
//! ```
//!
//! which is the joint-to-unimodal KL up to the (constant) entropy of the
//! frozen joint posterior. The conditioning `c_j` is an encoding of the raw
//! modality, or of its projector embedding when shared-information mode is
//! on. The freeze is structural: the joint model runs on a separate tape, so
//! its parameters cannot receive gradients.


use thiserror::Error;

use crate::flow::FlowStack;
use crate::joint::{shuffled_indices, JointVae, MultimodalData};
use crate::nn::{collect_grads, Activation, Adam, Mlp, MlpVars, Parametrized};
use crate::projector::ProjectorSet;
use crate::rng::{normal_tensor, stream_rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// What the stage-2 posteriors condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConditioningMode {
    /// Raw modality pixels.
    Raw,
    /// Frozen projector embeddings.
    Shared,
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditioningMode::Raw => write!(f, "raw"),
            ConditioningMode::Shared => write!(f, "shared"),
        }
    }
}

/// One modality's posterior: a context encoder feeding a conditional flow.
#[derive(Clone)]
pub struct UnimodalPosterior {
    pub modality: usize,
    pub context_encoder: Mlp,
    pub flow: FlowStack,
}

impl UnimodalPosterior {
    /// Context tensor for conditioning inputs (projector applied first in
    /// shared mode).
    pub fn context(&self, x: &Tensor, projector: Option<&Mlp>) -> Tensor {
        match projector {
            Some(p) => self.context_encoder.forward_tensor(&p.forward_tensor(x)),
            None => self.context_encoder.forward_tensor(x),
        }
    }

    /// `n_per_row` flow samples per conditioning row.
    pub fn sample(
        &self,
        x: &Tensor,
        projector: Option<&Mlp>,
        n_per_row: usize,
        seed: u64,
        stream: u64,
    ) -> Tensor {
        let c = self.context(x, projector);
        self.flow.sample(&c, n_per_row, seed, stream)
    }

    /// Per-row log-density without gradient tracking.
    pub fn log_density_tensor(&self, z: &Tensor, x: &Tensor, projector: Option<&Mlp>) -> Tensor {
        let c = self.context(x, projector);
        let tape = Tape::new();
        let bound = self.flow.bind(&tape);
        bound
            .log_density(tape.leaf(z.clone()), Some(tape.leaf(c)))
            .value()
    }
}

impl Parametrized for UnimodalPosterior {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.context_encoder.named_params() {
            out.push((format!("ctx.{n}"), t));
        }
        for (n, t) in self.flow.named_params() {
            out.push((format!("flow.{n}"), t));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.context_encoder.named_params_mut() {
            out.push((format!("ctx.{n}"), t));
        }
        for (n, t) in self.flow.named_params_mut() {
            out.push((format!("flow.{n}"), t));
        }
        out
    }
}

/// The full stage-2 artifact: one posterior per modality plus the
/// conditioning mode they were trained under.
#[derive(Clone)]
pub struct UnimodalPosteriors {
    pub posteriors: Vec<UnimodalPosterior>,
    pub mode: ConditioningMode,
}

impl UnimodalPosteriors {
    pub fn projector_for<'p>(
        &self,
        modality: usize,
        projectors: Option<&'p ProjectorSet>,
    ) -> Option<&'p Mlp> {
        match self.mode {
            ConditioningMode::Raw => None,
            ConditioningMode::Shared => Some(
                &projectors
                    .expect("shared mode requires the projector set")
                    .projectors[modality],
            ),
        }
    }
}

impl Parametrized for UnimodalPosteriors {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for p in &self.posteriors {
            for (n, t) in p.named_params() {
                out.push((format!("mod.{}.{n}", p.modality), t));
            }
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for p in &mut self.posteriors {
            let modality = p.modality;
            for (n, t) in p.named_params_mut() {
                out.push((format!("mod.{modality}.{n}"), t));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Stage2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// MADE blocks per flow; 0 keeps the conditional Gaussian base only
    /// (the plain-Gaussian posterior ablation).
    pub n_flows: usize,
    pub mode: ConditioningMode,
    /// Latent draws per datapoint per step for the expectation estimate.
    pub samples_per_datapoint: usize,
    pub seed: u64,
    pub context_dim: usize,
    pub context_hidden: Vec<usize>,
    pub made_hidden: Vec<usize>,
    pub base_hidden: Vec<usize>,
}

impl Stage2Config {
    pub fn toy_default(mode: ConditioningMode, seed: u64) -> Self {
        Stage2Config {
            epochs: 8,
            batch_size: 128,
            learning_rate: 1e-3,
            n_flows: 2,
            mode,
            samples_per_datapoint: 1,
            seed,
            context_dim: 64,
            context_hidden: match mode {
                ConditioningMode::Raw => vec![256, 256],
                ConditioningMode::Shared => vec![128, 128],
            },
            made_hidden: vec![128, 128],
            base_hidden: vec![128],
        }
    }
}

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("shared conditioning mode requires trained projectors")]
    MissingProjectors,
    #[error("projector set covers {got} modalities, need {need}")]
    ProjectorArity { got: usize, need: usize },
    #[error("non-finite stage-2 loss at epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Optim(#[from] crate::nn::OptimError),
}

/// Builds untrained posteriors matching the config and data dimensions.
pub fn build_posteriors(
    d_z: usize,
    input_dims: &[usize],
    cfg: &Stage2Config,
) -> UnimodalPosteriors {
    let posteriors = input_dims
        .iter()
        .enumerate()
        .map(|(j, &in_dim)| {
            let mut ctx_dims = vec![in_dim];
            ctx_dims.extend_from_slice(&cfg.context_hidden);
            ctx_dims.push(cfg.context_dim);
            let mut ctx = Mlp::zeros(&ctx_dims, Activation::Tanh, Activation::Tanh);
            let mut flow = FlowStack::new(
                d_z,
                cfg.context_dim,
                cfg.n_flows,
                &cfg.made_hidden,
                &cfg.base_hidden,
                cfg.seed.wrapping_add(1000 * j as u64),
            );
            let mut rng = stream_rng(cfg.seed, 10 + j as u64);
            ctx.init(&mut rng);
            flow.init(&mut rng);
            UnimodalPosterior { modality: j, context_encoder: ctx, flow }
        })
        .collect();
    UnimodalPosteriors { posteriors, mode: cfg.mode }
}

/// Frozen joint-posterior parameters for a whole dataset, computed in
/// chunks. The returned tensors are `n × d_z`.
pub fn frozen_joint_posteriors(joint: &JointVae, data: &MultimodalData) -> (Tensor, Tensor) {
    let n = data.len();
    let d_z = joint.d_z();
    let mut mu = Tensor::zeros(&[n, d_z]);
    let mut lv = Tensor::zeros(&[n, d_z]);
    let chunk = 512;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let xs = data.gather(&idx);
        let (m, l) = joint.encode_tensor(&xs);
        mu.data_mut()[start * d_z..end * d_z].copy_from_slice(m.data());
        lv.data_mut()[start * d_z..end * d_z].copy_from_slice(l.data());
        start = end;
    }
    (mu, lv)
}

/// The stage-2 objective for one batch, on a caller-provided tape. `z` must
/// already be drawn from the frozen joint posterior (it enters as a
/// constant leaf). Returns the scalar loss plus the per-modality means.
pub fn luni_loss<'t>(
    bound: &[UnimodalPosteriorVars<'t>],
    z: Var<'t>,
    contexts_in: &[Var<'t>],
) -> (Var<'t>, Vec<f64>) {
    assert_eq!(bound.len(), contexts_in.len());
    let mut per_modality = Vec::with_capacity(bound.len());
    let mut loss: Option<Var<'t>> = None;
    for (p, &cin) in bound.iter().zip(contexts_in) {
        let c = p.context_encoder.forward(cin);
        let lp = p.flow.log_density(z, Some(c));
        let term = lp.mean().neg();
        per_modality.push(term.value().scalar_value());
        loss = Some(match loss {
            Some(l) => l.add(term),
            None => term,
        });
    }
    (loss.expect("at least one posterior"), per_modality)
}

pub struct UnimodalPosteriorVars<'t> {
    pub modality: usize,
    pub context_encoder: MlpVars<'t>,
    pub flow: crate::flow::FlowStackVars<'t>,
}

impl UnimodalPosterior {
    pub fn bind<'t>(&self, tape: &'t Tape) -> UnimodalPosteriorVars<'t> {
        UnimodalPosteriorVars {
            modality: self.modality,
            context_encoder: self.context_encoder.bind(tape),
            flow: self.flow.bind(tape),
        }
    }
}

impl<'t> UnimodalPosteriorVars<'t> {
    pub fn param_vars(&self, out: &mut Vec<(String, Var<'t>)>) {
        self.context_encoder
            .param_vars(&format!("mod.{}.ctx", self.modality), out);
        self.flow.param_vars(&format!("mod.{}.flow", self.modality), out);
    }
}

/// Per-epoch loss trace entry.
#[derive(Clone, Debug)]
pub struct Stage2Trace {
    pub epoch: usize,
    pub per_modality: Vec<f64>,
    pub total: f64,
}

/// Trains all posteriors jointly against the frozen `joint` model.
/// Deterministic per seed; the joint model is untouched (it never enters the
/// training tape).
pub fn train_unimodal(
    joint: &JointVae,
    data: &MultimodalData,
    cfg: &Stage2Config,
    projectors: Option<&ProjectorSet>,
) -> Result<(UnimodalPosteriors, Vec<Stage2Trace>), Stage2Error> {
    let m = data.n_modalities();
    let conditioning: Vec<Tensor> = match cfg.mode {
        ConditioningMode::Raw => data.modalities.clone(),
        ConditioningMode::Shared => {
            let set = projectors.ok_or(Stage2Error::MissingProjectors)?;
            if set.projectors.len() != m {
                return Err(Stage2Error::ProjectorArity { got: set.projectors.len(), need: m });
            }
            (0..m).map(|j| set.project(j, &data.modalities[j])).collect()
        }
    };
    let cond_data = MultimodalData::new(conditioning);
    let input_dims = cond_data.dims();
    let mut model = build_posteriors(joint.d_z(), &input_dims, cfg);

    let (mu_all, lv_all) = frozen_joint_posteriors(joint, data);
    let d_z = joint.d_z();

    let mut opt = Adam::new(cfg.learning_rate);
    let mut noise_rng = stream_rng(cfg.seed, 2);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(data.len(), cfg.seed, 2000 + epoch as u64);
        let mut totals = vec![0.0; m];
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let reps = cfg.samples_per_datapoint.max(1);
            let rows = batch_idx.len() * reps;
            // Draw z from the frozen joint posterior as plain tensors; the
            // training tape only ever sees them as constants.
            let mut z = Tensor::zeros(&[rows, d_z]);
            let eps = normal_tensor(&[rows, d_z], &mut noise_rng);
            for (r, &i) in batch_idx.iter().enumerate() {
                for rep in 0..reps {
                    let row = r * reps + rep;
                    for k in 0..d_z {
                        let mu = mu_all.data()[i * d_z + k];
                        let lv = lv_all.data()[i * d_z + k];
                        z.data_mut()[row * d_z + k] =
                            mu + (0.5 * lv).exp() * eps.data()[row * d_z + k];
                    }
                }
            }
            let cond_batch = gather_repeated(&cond_data, batch_idx, reps);

            let tape = Tape::new();
            let bound: Vec<UnimodalPosteriorVars<'_>> =
                model.posteriors.iter().map(|p| p.bind(&tape)).collect();
            let zv = tape.leaf(z);
            let cins: Vec<Var<'_>> =
                cond_batch.iter().map(|c| tape.leaf(c.clone())).collect();
            let (loss, per_modality) = luni_loss(&bound, zv, &cins);
            let value = loss.value().scalar_value();
            if !value.is_finite() {
                return Err(Stage2Error::NonFinite(epoch));
            }
            let grads = tape.backward(loss);
            let mut named = Vec::new();
            for b in &bound {
                b.param_vars(&mut named);
            }
            let grad_map = collect_grads(&grads, &named);
            opt.step(model.named_params_mut(), &grad_map)?;

            for (t, v) in totals.iter_mut().zip(&per_modality) {
                *t += v * batch_idx.len() as f64;
            }
            total += value * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        trace.push(Stage2Trace {
            epoch,
            per_modality: totals.iter().map(|t| t / seen as f64).collect(),
            total: total / seen as f64,
        });
    }
    Ok((model, trace))
}

fn gather_repeated(data: &MultimodalData, idx: &[usize], reps: usize) -> Vec<Tensor> {
    if reps == 1 {
        return data.gather(idx);
    }
    let expanded: Vec<usize> = idx
        .iter()
        .flat_map(|&i| std::iter::repeat(i).take(reps))
        .collect();
    data.gather(&expanded)
}

/// `epoch,mod_0,...,total` rows.
pub fn write_stage2_trace_csv(trace: &[Stage2Trace], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = trace.first().map(|t| t.per_modality.len()).unwrap_or(0);
    let headers: Vec<String> = (0..m).map(|j| format!("mod_{j}")).collect();
    writeln!(w, "epoch,{},total", headers.join(","))?;
    for t in trace {
        let mods: Vec<String> = t.per_modality.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{},{},{}", t.epoch, mods.join(","), t.total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{JointVae, JointVaeSpec, Likelihood};
    use crate::tensor::Tensor;

    fn tiny_joint() -> JointVae {
        let mut model = JointVae::new(&JointVaeSpec {
            modality_dims: vec![6, 4],
            d_z: 2,
            beta: 1.0,
            lambdas: vec![1.0, 1.0],
            head_hidden: vec![8],
            trunk_hidden: vec![8],
            decoder_hidden: vec![8],
            likelihoods: vec![Likelihood::Bernoulli; 2],
        });
        model.init(3);
        model
    }

    fn tiny_data(n: usize) -> MultimodalData {
        let m0 = normal_tensor(&[n, 6], &mut stream_rng(100, 0))
            .map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let m1 = normal_tensor(&[n, 4], &mut stream_rng(100, 1))
            .map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        MultimodalData::new(vec![m0, m1])
    }

    fn tiny_cfg() -> Stage2Config {
        Stage2Config {
            epochs: 2,
            batch_size: 16,
            learning_rate: 1e-3,
            n_flows: 2,
            mode: ConditioningMode::Raw,
            samples_per_datapoint: 1,
            seed: 7,
            context_dim: 8,
            context_hidden: vec![16],
            made_hidden: vec![8],
            base_hidden: vec![8],
        }
    }

    #[test]
    fn joint_parameters_are_bitwise_untouched() {
        let joint = tiny_joint();
        let before: Vec<Vec<u8>> = joint
            .named_params()
            .iter()
            .map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        let data = tiny_data(64);
        let (_, trace) = train_unimodal(&joint, &data, &tiny_cfg(), None).unwrap();
        assert!(!trace.is_empty());
        let after: Vec<Vec<u8>> = joint
            .named_params()
            .iter()
            .map(|(_, t)| t.data().iter().flat_map(|v| v.to_le_bytes()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn gradient_map_contains_only_posterior_parameters() {
        // The structural freeze: the training tape never holds joint params,
        // so the gradient map is exactly the posterior parameter set.
        let joint = tiny_joint();
        let data = tiny_data(8);
        let cfg = tiny_cfg();
        let model = build_posteriors(joint.d_z(), &data.dims(), &cfg);
        let (mu, lv) = frozen_joint_posteriors(&joint, &data);
        let mut z = Tensor::zeros(&[8, 2]);
        let eps = normal_tensor(&[8, 2], &mut stream_rng(1, 1));
        for i in 0..16 {
            z.data_mut()[i] = mu.data()[i] + (0.5 * lv.data()[i]).exp() * eps.data()[i];
        }
        let tape = Tape::new();
        let bound: Vec<UnimodalPosteriorVars<'_>> =
            model.posteriors.iter().map(|p| p.bind(&tape)).collect();
        let zv = tape.leaf(z);
        let cins: Vec<Var<'_>> = data.modalities.iter().map(|c| tape.leaf(c.clone())).collect();
        let (loss, _) = luni_loss(&bound, zv, &cins);
        let grads = tape.backward(loss);
        let mut named = Vec::new();
        for b in &bound {
            b.param_vars(&mut named);
        }
        let map = collect_grads(&grads, &named);
        assert!(map.keys().all(|k| k.starts_with("mod.")));
        // Sanity: at least one flow parameter receives a nonzero gradient.
        assert!(map
            .iter()
            .any(|(k, g)| k.contains("flow") && g.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn matched_gaussian_family_attains_entropy_floor() {
        // Single datapoint, posterior family containing the joint posterior
        // (identity flows, matched base): the loss at the matched parameters
        // equals the joint posterior's entropy in expectation over z.
        let joint = tiny_joint();
        let data = tiny_data(1);
        let (mu, lv) = frozen_joint_posteriors(&joint, &data);

        // Hand-build a posterior whose base equals the joint posterior and
        // whose blocks are identity: context encoder outputs zero (zero
        // weights), base net bias set to (μ, log σ²).
        let cfg = Stage2Config { n_flows: 2, ..tiny_cfg() };
        let mut model = build_posteriors(joint.d_z(), &data.dims(), &cfg);
        for p in &mut model.posteriors {
            for layer in &mut p.context_encoder.layers {
                layer.weight = Tensor::zeros(&layer.weight.shape().to_vec());
                layer.bias = Tensor::zeros(&layer.bias.shape().to_vec());
            }
            for b in &mut p.flow.blocks {
                for l in &mut b.layers {
                    l.weight = Tensor::zeros(&l.weight.shape().to_vec());
                    l.bias = Tensor::zeros(&l.bias.shape().to_vec());
                }
            }
            let last = p.flow.base_net.layers.len() - 1;
            for l in p.flow.base_net.layers.iter_mut().take(last) {
                l.weight = Tensor::zeros(&l.weight.shape().to_vec());
                l.bias = Tensor::zeros(&l.bias.shape().to_vec());
            }
            let out = &mut p.flow.base_net.layers[last];
            out.weight = Tensor::zeros(&out.weight.shape().to_vec());
            // Identity blocks still reverse columns between block 1 and
            // block 0, so the peeled point is the coordinate-reversed z: the
            // base must carry the reversed parameters to represent N(μ, Σ).
            out.bias = Tensor::vector(vec![
                mu.data()[1],
                mu.data()[0],
                lv.data()[1],
                lv.data()[0],
            ]);
        }

        // Monte Carlo estimate of E_q[−log q_j(z)] per modality.
        let reps = 200_000;
        let mut z = Tensor::zeros(&[reps, 2]);
        let eps = normal_tensor(&[reps, 2], &mut stream_rng(5, 5));
        for r in 0..reps {
            for k in 0..2 {
                z.data_mut()[r * 2 + k] =
                    mu.data()[k] + (0.5 * lv.data()[k]).exp() * eps.data()[r * 2 + k];
            }
        }
        let x_rep: Vec<Tensor> = data
            .modalities
            .iter()
            .map(|m| {
                let d = m.shape()[1];
                let mut out = Tensor::zeros(&[reps, d]);
                for r in 0..reps {
                    out.data_mut()[r * d..(r + 1) * d].copy_from_slice(m.row(0));
                }
                out
            })
            .collect();
        // Gaussian entropy: ½ Σ_k (1 + ln 2π + log σ²_k).
        let entropy: f64 = (0..2)
            .map(|k| 0.5 * (1.0 + crate::dist::LN_2PI + lv.data()[k]))
            .sum();
        for (j, p) in model.posteriors.iter().enumerate() {
            let lp = p.log_density_tensor(&z, &x_rep[j], None);
            let mc = -lp.data().iter().sum::<f64>() / reps as f64;
            let se = {
                let mean = -mc;
                let var = lp
                    .data()
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / (reps as f64 - 1.0);
                (var / reps as f64).sqrt()
            };
            assert!(
                (mc - entropy).abs() < 4.0 * se + 1e-6,
                "modality {j}: {mc} vs entropy {entropy} (se {se})"
            );
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let joint = tiny_joint();
        let data = tiny_data(128);
        let cfg = Stage2Config { epochs: 5, learning_rate: 3e-3, ..tiny_cfg() };
        let (m1, t1) = train_unimodal(&joint, &data, &cfg, None).unwrap();
        let (m2, t2) = train_unimodal(&joint, &data, &cfg, None).unwrap();
        assert!(t1.last().unwrap().total < t1.first().unwrap().total);
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.total, b.total);
        }
        for ((_, p1), (_, p2)) in m1.named_params().iter().zip(m2.named_params().iter()) {
            assert_eq!(p1.data(), p2.data());
        }
    }

    #[test]
    fn shared_mode_requires_projectors() {
        let joint = tiny_joint();
        let data = tiny_data(32);
        let cfg = Stage2Config { mode: ConditioningMode::Shared, ..tiny_cfg() };
        assert!(matches!(
            train_unimodal(&joint, &data, &cfg, None),
            Err(Stage2Error::MissingProjectors)
        ));
    }

    #[test]
    fn shared_mode_context_depends_only_on_projection() {
        // Two inputs with the same projector output get bit-identical
        // densities, however much the raw pixels differ.
        let joint = tiny_joint();
        let cfg = Stage2Config { mode: ConditioningMode::Shared, ..tiny_cfg() };
        let model = build_posteriors(joint.d_z(), &[3, 3], &cfg);
        // A projector that reads only the first coordinate.
        let mut proj = Mlp::zeros(&[6, 3], Activation::Tanh, Activation::Identity);
        proj.layers[0].weight = Tensor::matrix(
            3,
            6,
            vec![
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let x_a = Tensor::matrix(1, 6, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let x_b = Tensor::matrix(1, 6, vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let z = Tensor::matrix(1, 2, vec![0.3, -0.4]);
        let lp_a = model.posteriors[0].log_density_tensor(&z, &proj.forward_tensor(&x_a), None);
        let lp_b = model.posteriors[0].log_density_tensor(&z, &proj.forward_tensor(&x_b), None);
        assert_eq!(lp_a.data(), lp_b.data());
    }
}
