//! Generation quality metrics: label coherence across modalities and
//! Fréchet distances on learned features.
//!
//! A small classifier per modality (trained on held-out real data, gated at
//! 99% test accuracy) judges the class of generated images; its penultimate
//! activations double as the feature space for the Fréchet distance between
//! Gaussian moment summaries of real and generated sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::joint::{shuffled_indices, JointVae, MultimodalData};
use crate::linalg;
use crate::nn::{collect_grads, Activation, Adam, Mlp, Parametrized};
use crate::projector::ProjectorSet;
use crate::rng::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::toy::{ShapeSample, IMAGE_PIXELS, IMAGE_SIDE, MODALITIES};
use crate::unimodal::UnimodalPosteriors;

/// Feature width used for Fréchet statistics (the classifier's penultimate
/// layer).
pub const FEATURE_DIM: usize = 16;
/// Pixel threshold applied to decoder probabilities before classification.
pub const BINARIZE_AT: f64 = 0.5;
/// Covariance jitter added before matrix square roots.
const COV_JITTER: f64 = 1e-6;
/// Accuracy gate below which a classifier refuses to judge coherence.
pub const CLASSIFIER_GATE: f64 = 0.99;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("classifier for modality {modality} reached only {accuracy:.4} accuracy (< {CLASSIFIER_GATE})")]
    ClassifierUnfit { modality: usize, accuracy: f64 },
    #[error("empty sample set for {0}")]
    EmptySampleSet(String),
    #[error(transparent)]
    Optim(#[from] crate::nn::OptimError),
}

/// Two-class image classifier. The hidden stack is
/// `1024 → 64 → FEATURE_DIM → 2`; `features` exposes the penultimate layer.
#[derive(Clone)]
pub struct ToyClassifier {
    pub net: Mlp,
}

impl ToyClassifier {
    fn new() -> Self {
        ToyClassifier {
            net: Mlp::zeros(&[IMAGE_PIXELS, 64, FEATURE_DIM, 2], Activation::Tanh, Activation::Identity),
        }
    }

    pub fn logits(&self, x: &Tensor) -> Tensor {
        self.net.forward_tensor(x)
    }

    /// Argmax class per row (0 = full, 1 = empty).
    pub fn classify(&self, x: &Tensor) -> Vec<usize> {
        self.logits(x)
            .data()
            .chunks_exact(2)
            .map(|row| if row[1] > row[0] { 1 } else { 0 })
            .collect()
    }

    /// Penultimate activations (`batch × FEATURE_DIM`).
    pub fn features(&self, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let bound = self.net.bind(&tape);
        let mut h = tape.leaf(x.clone());
        for layer in &bound.layers[..bound.layers.len() - 1] {
            h = layer.activation.apply(h.matmul(layer.weight.transpose()).add_bias(layer.bias));
        }
        h.value()
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> f64 {
        let predicted = self.classify(x);
        let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len() as f64
    }
}

/// Softmax cross-entropy over two-class logits.
fn cross_entropy<'t>(logits: Var<'t>, onehot: Var<'t>) -> Var<'t> {
    let lse = logits.exp().row_sum().log();
    let picked = logits.mul(onehot).row_sum();
    lse.sub(picked).mean()
}

fn onehot_labels(labels: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), 2]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * 2 + l] = 1.0;
    }
    t
}

/// Trains one classifier per modality on `samples`, holding out a fifth for
/// the accuracy gate. Fails rather than returning a classifier below the
/// gate — an unfit judge would make coherence numbers meaningless.
pub fn train_toy_classifiers(
    samples: &[ShapeSample],
    seed: u64,
) -> Result<Vec<ToyClassifier>, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySampleSet("classifier training".into()));
    }
    let split = samples.len() * 4 / 5;
    let train = &samples[..split];
    let held_out = &samples[split..];
    let labels_train = crate::toy::batch_labels(train);
    let labels_test = crate::toy::batch_labels(held_out);

    let mut out = Vec::new();
    for modality in 0..MODALITIES.len() {
        let x_train = crate::toy::batch_images(train, modality);
        let x_test = crate::toy::batch_images(held_out, modality);
        let mut clf = ToyClassifier::new();
        let mut rng = stream_rng(seed, modality as u64);
        clf.net.init(&mut rng);
        let mut opt = Adam::new(3e-3);
        let batch = 128;
        for epoch in 0..20u64 {
            let order = shuffled_indices(train.len(), seed, 300 + epoch);
            for chunk in order.chunks(batch) {
                let mut xb = Tensor::zeros(&[chunk.len(), IMAGE_PIXELS]);
                let mut lb = Vec::with_capacity(chunk.len());
                for (r, &i) in chunk.iter().enumerate() {
                    xb.data_mut()[r * IMAGE_PIXELS..(r + 1) * IMAGE_PIXELS]
                        .copy_from_slice(x_train.row(i));
                    lb.push(labels_train[i]);
                }
                let tape = Tape::new();
                let bound = clf.net.bind(&tape);
                let logits = bound.forward(tape.leaf(xb));
                let loss = cross_entropy(logits, tape.leaf(onehot_labels(&lb)));
                let grads = tape.backward(loss);
                let mut named = Vec::new();
                bound.param_vars("clf", &mut named);
                let grad_map = collect_grads(&grads, &named);
                let params: Vec<(String, &mut Tensor)> = clf
                    .net
                    .named_params_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("clf.{n}"), t))
                    .collect();
                opt.step(params, &grad_map)?;
            }
        }
        let accuracy = clf.accuracy(&x_test, &labels_test);
        if accuracy < CLASSIFIER_GATE {
            return Err(EvalError::ClassifierUnfit { modality, accuracy });
        }
        out.push(clf);
    }
    Ok(out)
}

/// Fraction of positions where the two label sequences agree.
pub fn coherence(labels_a: &[usize], labels_b: &[usize]) -> f64 {
    assert!(!labels_a.is_empty(), "coherence of an empty sample set");
    assert_eq!(labels_a.len(), labels_b.len());
    let hits = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count();
    hits as f64 / labels_a.len() as f64
}

pub fn binarize(x: &Tensor) -> Tensor {
    x.map(|v| if v > BINARIZE_AT { 1.0 } else { 0.0 })
}

/// Gaussian moment summary of a feature batch.
#[derive(Clone, Debug)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub dim: usize,
}

impl FrechetStats {
    pub fn from_features(features: &Tensor) -> Self {
        let (n, d) = (features.shape()[0], features.shape()[1]);
        assert!(n >= 2, "need at least two feature rows");
        let mut mean = vec![0.0; d];
        for row in features.data().chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for row in features.data().chunks_exact(d) {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (row[j] - mean[j]);
                }
            }
        }
        for c in &mut cov {
            *c /= n as f64 - 1.0;
        }
        FrechetStats { mean, cov, dim: d }
    }
}

/// Squared Wasserstein-2 distance between Gaussian summaries:
/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2·(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> f64 {
    assert_eq!(a.dim, b.dim, "feature dimension mismatch");
    let d = a.dim;
    let jitter = |cov: &[f64]| -> Vec<f64> {
        let mut c = cov.to_vec();
        for i in 0..d {
            c[i * d + i] += COV_JITTER;
        }
        c
    };
    let cov_a = jitter(&a.cov);
    let cov_b = jitter(&b.cov);

    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();

    let sqrt_a = linalg::sym_matrix_function(&cov_a, d, |v| v.max(0.0).sqrt());
    let mut tmp = vec![0.0; d * d];
    crate::tensor::matmul_nn(&sqrt_a, &cov_b, d, d, d, &mut tmp);
    let mut inner = vec![0.0; d * d];
    crate::tensor::matmul_nn(&tmp, &sqrt_a, d, d, d, &mut inner);
    let cross = linalg::trace_sqrt_psd(&inner, d);

    mean_term + trace(&cov_a) + trace(&cov_b) - 2.0 * cross
}

/// A linear logistic probe on frozen features; returns the fitted weights
/// and the training accuracy.
pub fn fit_logistic_probe(features: &Tensor, labels: &[usize], seed: u64) -> Mlp {
    let d = features.shape()[1];
    let mut probe = Mlp::zeros(&[d, 2], Activation::Tanh, Activation::Identity);
    probe.init(&mut stream_rng(seed, 0));
    let mut opt = Adam::new(0.05);
    let onehot = onehot_labels(labels);
    for _ in 0..300 {
        let tape = Tape::new();
        let bound = probe.bind(&tape);
        let logits = bound.forward(tape.leaf(features.clone()));
        let loss = cross_entropy(logits, tape.leaf(onehot.clone()));
        let grads = tape.backward(loss);
        let mut named = Vec::new();
        bound.param_vars("p", &mut named);
        let grad_map = collect_grads(&grads, &named);
        let params: Vec<(String, &mut Tensor)> = probe
            .named_params_mut()
            .into_iter()
            .map(|(n, t)| (format!("p.{n}"), t))
            .collect();
        opt.step(params, &grad_map).expect("probe gradients are finite");
    }
    probe
}

pub fn probe_accuracy(probe: &Mlp, features: &Tensor, labels: &[usize]) -> f64 {
    let logits = probe.forward_tensor(features);
    let hits = logits
        .data()
        .chunks_exact(2)
        .zip(labels)
        .filter(|(row, &l)| (row[1] > row[0]) == (l == 1))
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    /// Conditional generations per direction.
    pub n_conditional: usize,
    /// Latent draws for joint (prior) generation.
    pub n_joint: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_conditional: 2000, n_joint: 2000, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionReport {
    pub from: String,
    pub to: String,
    pub coherence: f64,
    pub frechet: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointGenerationReport {
    pub coherence: f64,
    pub frechet: BTreeMap<String, f64>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub directions: Vec<DirectionReport>,
    pub joint_generation: JointGenerationReport,
    /// Classifier agreement on real paired data — the ceiling any generator
    /// is measured against.
    pub real_pair_agreement: f64,
    pub classifier_accuracy: Vec<f64>,
    pub seed: u64,
    pub checkpoint_hashes: BTreeMap<String, String>,
}

/// Runs the full evaluation protocol: per-direction conditional generation
/// through the stage-2 posteriors, joint generation from the prior, label
/// coherence and Fréchet distances on classifier features.
pub fn evaluate_pipeline(
    joint: &JointVae,
    posteriors: &UnimodalPosteriors,
    projectors: Option<&ProjectorSet>,
    test: &[ShapeSample],
    cfg: &EvalConfig,
) -> Result<CoherenceReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptySampleSet("evaluation".into()));
    }
    let classifiers = train_toy_classifiers(test, cfg.seed)?;
    let data = MultimodalData::from_toy(test);
    let m = MODALITIES.len();

    // Real-pair calibration and per-modality real labels/features.
    let real_labels: Vec<Vec<usize>> =
        (0..m).map(|j| classifiers[j].classify(&data.modalities[j])).collect();
    let real_pair_agreement = coherence(&real_labels[0], &real_labels[1]);
    let real_stats: Vec<FrechetStats> = (0..m)
        .map(|j| FrechetStats::from_features(&classifiers[j].features(&data.modalities[j])))
        .collect();

    let classifier_accuracy: Vec<f64> = {
        let labels = crate::toy::batch_labels(test);
        (0..m).map(|j| classifiers[j].accuracy(&data.modalities[j], &labels)).collect()
    };

    // Conditional directions.
    let n_cond = cfg.n_conditional.min(test.len());
    let mut directions = Vec::new();
    for from in 0..m {
        for to in 0..m {
            if from == to {
                continue;
            }
            let idx: Vec<usize> = (0..n_cond).collect();
            let x_from = {
                let rows = data.gather(&idx);
                rows[from].clone()
            };
            let projector = posteriors.projector_for(from, projectors);
            let z = posteriors.posteriors[from].sample(
                &x_from,
                projector,
                1,
                cfg.seed,
                (100 + from * m + to) as u64,
            );
            let decoded = joint.decode_tensor(&z);
            let generated = binarize(&decoded[to]);
            let generated_labels = classifiers[to].classify(&generated);
            let conditioning_labels = &real_labels[from][..n_cond];
            let stats_gen = FrechetStats::from_features(&classifiers[to].features(&generated));
            directions.push(DirectionReport {
                from: MODALITIES[from].to_string(),
                to: MODALITIES[to].to_string(),
                coherence: coherence(conditioning_labels, &generated_labels),
                frechet: frechet_distance(&real_stats[to], &stats_gen),
                n: n_cond,
            });
        }
    }

    // Joint generation from the prior.
    let z = joint.prior.sample(cfg.n_joint, &mut stream_rng(cfg.seed, 50));
    let decoded = joint.decode_tensor(&z);
    let labels: Vec<Vec<usize>> = (0..m)
        .map(|j| classifiers[j].classify(&binarize(&decoded[j])))
        .collect();
    let agree = (0..cfg.n_joint)
        .filter(|&i| (0..m).all(|j| labels[j][i] == labels[0][i]))
        .count();
    let mut joint_frechet = BTreeMap::new();
    for j in 0..m {
        let stats = FrechetStats::from_features(&classifiers[j].features(&binarize(&decoded[j])));
        joint_frechet.insert(
            MODALITIES[j].to_string(),
            frechet_distance(&real_stats[j], &stats),
        );
    }

    Ok(CoherenceReport {
        directions,
        joint_generation: JointGenerationReport {
            coherence: agree as f64 / cfg.n_joint as f64,
            frechet: joint_frechet,
            n: cfg.n_joint,
        },
        real_pair_agreement,
        classifier_accuracy,
        seed: cfg.seed,
        checkpoint_hashes: BTreeMap::new(),
    })
}

/// Writes an ASCII PGM (P2) mosaic of 32×32 tiles, `cols` per row, with a
/// one-pixel separator. Pixel values are scaled from `[0, 1]` to 0–255.
pub fn write_pgm_mosaic(images: &Tensor, cols: usize, path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let n = images.shape()[0];
    assert_eq!(images.shape()[1], IMAGE_PIXELS, "mosaic expects 1024-pixel rows");
    let rows = n.div_ceil(cols);
    let width = cols * IMAGE_SIDE + (cols - 1);
    let height = rows * IMAGE_SIDE + rows.saturating_sub(1);
    let mut canvas = vec![0u8; width * height];
    for (i, img) in images.data().chunks_exact(IMAGE_PIXELS).enumerate() {
        let tile_r = (i / cols) * (IMAGE_SIDE + 1);
        let tile_c = (i % cols) * (IMAGE_SIDE + 1);
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                let v = (img[r * IMAGE_SIDE + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                canvas[(tile_r + r) * width + tile_c + c] = v;
            }
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "P2")?;
    writeln!(w, "{width} {height}")?;
    writeln!(w, "255")?;
    for row in canvas.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_tensor;
    use crate::toy::{generate_dataset, ToyDatasetConfig};

    #[test]
    fn classifier_meets_gate_and_calibrates() {
        let samples = generate_dataset(&ToyDatasetConfig { n_samples: 600, seed: 40 }).unwrap();
        let classifiers = train_toy_classifiers(&samples, 1).unwrap();
        // Canonical extremes classified with confidence.
        let full_square = Tensor::new(vec![1, IMAGE_PIXELS], crate::toy::rasterize_square(20, true));
        let empty_circle = Tensor::new(vec![1, IMAGE_PIXELS], crate::toy::rasterize_circle(20, false));
        assert_eq!(classifiers[0].classify(&full_square), vec![0]);
        assert_eq!(classifiers[1].classify(&empty_circle), vec![1]);
        // Softmax confidence on the full square.
        let logits = classifiers[0].logits(&full_square);
        let p_full = {
            let (a, b) = (logits.data()[0], logits.data()[1]);
            let m = a.max(b);
            ((a - m).exp()) / ((a - m).exp() + (b - m).exp())
        };
        assert!(p_full > 0.99, "confidence {p_full}");

        // Real paired data: coherence equals classifier agreement ≥ 0.99.
        let data = MultimodalData::from_toy(&samples);
        let la = classifiers[0].classify(&data.modalities[0]);
        let lb = classifiers[1].classify(&data.modalities[1]);
        assert!(coherence(&la, &lb) >= 0.99);
    }

    #[test]
    fn label_shuffled_pairs_sit_at_chance() {
        let samples = generate_dataset(&ToyDatasetConfig { n_samples: 10_000, seed: 41 }).unwrap();
        let labels = crate::toy::batch_labels(&samples);
        // Random re-pairing of balanced classes agrees at chance.
        let perm = shuffled_indices(labels.len(), 7, 0);
        let shuffled: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let c = coherence(&labels, &shuffled);
        assert!((c - 0.5).abs() < 0.02, "chance level {c}");
    }

    #[test]
    fn coherence_trivial_cases() {
        assert_eq!(coherence(&[1], &[1]), 1.0);
        assert_eq!(coherence(&[0, 1], &[1, 0]), 0.0);
    }

    #[test]
    fn frechet_identical_stats_is_zero() {
        let f = normal_tensor(&[200, 4], &mut stream_rng(42, 0));
        let s = FrechetStats::from_features(&f);
        let d = frechet_distance(&s, &s);
        assert!(d.abs() < 1e-8, "distance {d}");
    }

    #[test]
    fn frechet_identity_covariances_reduce_to_mean_term() {
        let d = 3;
        let mu: Vec<f64> = vec![0.5, -1.0, 2.0];
        let a = FrechetStats { mean: vec![0.0; d], cov: Tensor::eye(d).into_data(), dim: d };
        let b = FrechetStats { mean: mu.clone(), cov: Tensor::eye(d).into_data(), dim: d };
        let expect: f64 = mu.iter().map(|v| v * v).sum();
        let got = frechet_distance(&a, &b);
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn frechet_commuting_diagonal_closed_form() {
        // diag(4,1) vs diag(1,1), equal means:
        // (4+1+1+1) − 2·(2+1) = 1.
        let a = FrechetStats { mean: vec![0.0; 2], cov: vec![4.0, 0.0, 0.0, 1.0], dim: 2 };
        let b = FrechetStats { mean: vec![0.0; 2], cov: vec![1.0, 0.0, 0.0, 1.0], dim: 2 };
        let got = frechet_distance(&a, &b);
        assert!((got - 1.0).abs() < 1e-5, "distance {got}");
    }

    #[test]
    fn frechet_symmetry_and_eigen_cross_check() {
        let fa = normal_tensor(&[300, 2], &mut stream_rng(43, 0));
        let fb = normal_tensor(&[300, 2], &mut stream_rng(43, 1)).map(|v| 1.5 * v + 0.3);
        let sa = FrechetStats::from_features(&fa);
        let sb = FrechetStats::from_features(&fb);
        let ab = frechet_distance(&sa, &sb);
        let ba = frechet_distance(&sb, &sa);
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab >= 0.0);

        // 2×2 cross-check: Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2}) via the identity
        // trace² = Tr(M) + 2·√det(M) for a 2×2 PSD matrix M.
        let jit = |c: &Vec<f64>| {
            let mut c = c.clone();
            c[0] += COV_JITTER;
            c[3] += COV_JITTER;
            c
        };
        let ca = jit(&sa.cov);
        let cb = jit(&sb.cov);
        let sqrt_a = linalg::sym_matrix_function(&ca, 2, |v| v.max(0.0).sqrt());
        let mut t = vec![0.0; 4];
        crate::tensor::matmul_nn(&sqrt_a, &cb, 2, 2, 2, &mut t);
        let mut m = vec![0.0; 4];
        crate::tensor::matmul_nn(&t, &sqrt_a, 2, 2, 2, &mut m);
        let tr = m[0] + m[3];
        let det = (m[0] * m[3] - m[1] * m[2]).max(0.0);
        let cross = (tr + 2.0 * det.sqrt()).sqrt();
        let mean_term: f64 = sa
            .mean
            .iter()
            .zip(&sb.mean)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let closed = mean_term + ca[0] + ca[3] + cb[0] + cb[3] - 2.0 * cross;
        assert!((ab - closed).abs() < 1e-6, "{ab} vs closed {closed}");
    }

    #[test]
    fn probe_separates_linear_classes() {
        let n = 400;
        let mut features = normal_tensor(&[n, 3], &mut stream_rng(44, 0));
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for (i, &l) in labels.iter().enumerate() {
            features.data_mut()[i * 3] += if l == 0 { -2.0 } else { 2.0 };
        }
        let probe = fit_logistic_probe(&features, &labels, 1);
        assert!(probe_accuracy(&probe, &features, &labels) > 0.95);
    }

    #[test]
    fn pgm_mosaic_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.pgm");
        let samples = generate_dataset(&ToyDatasetConfig { n_samples: 6, seed: 45 }).unwrap();
        let images = crate::toy::batch_images(&samples, 0);
        write_pgm_mosaic(&images, 3, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P2"));
        let dims = lines.next().unwrap();
        assert_eq!(dims, format!("{} {}", 3 * 32 + 2, 2 * 32 + 1));
        assert_eq!(lines.next(), Some("255"));
        let values: Vec<u32> = lines
            .flat_map(|l| l.split_whitespace().map(|v| v.parse().unwrap()))
            .collect();
        assert_eq!(values.len(), (3 * 32 + 2) * (2 * 32 + 1));
        assert!(values.iter().all(|&v| v <= 255));
    }
}
