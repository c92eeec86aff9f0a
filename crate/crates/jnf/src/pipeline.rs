//! Stage orchestration: how the command-line surface (and the test
//! harnesses) run the pieces end to end.
//!
//! Every stage reads a [`RunConfig`], validates its prerequisites, does the
//! work through the library modules, and writes artifacts plus a run
//! manifest (resolved config, seeds, input/output hashes). Stage links are
//! enforced through checkpoint content hashes, so evaluating a stage-2
//! model against the wrong stage-1 checkpoint is an error rather than a
//! silent mismatch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ckpt::{self, CheckpointMeta, CkptError};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{self, EvalConfig};
use crate::hmc::{self, BoundExpert, HmcConfig, SubsetPosteriorTarget};
use crate::joint::{self, JointTrainConfig, JointVae, JointVaeSpec, MultimodalData};
use crate::nn::Parametrized;
use crate::projector::{self, ProjectorMethod, ProjectorSet, ProjectorTrainConfig};
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use crate::toy::{self, ToyDatasetConfig, MODALITIES};
use crate::unimodal::{self, ConditioningMode, Stage2Config, UnimodalPosteriors};

pub const KIND_JOINT: &str = "joint-vae";
pub const KIND_POSTERIORS: &str = "flow-posteriors";
pub const KIND_PROJECTORS: &str = "projectors";

/// Offset between the train-set seed and the held-out-set seed when one
/// config drives both generations.
pub const TEST_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A prerequisite stage artifact is missing or inconsistent (exit 3).
    #[error("stage order violation: {0}")]
    StageOrder(String),
    /// Everything else (exit 1).
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::StageOrder(_) => 3,
            PipelineError::Runtime(_) => 1,
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::Runtime(e.to_string())
            }
        })*
    };
}
runtime_from!(
    std::io::Error,
    ConfigError,
    toy::ToyDataError,
    projector::ProjectorError,
    eval::EvalError,
    serde_json::Error
);

impl From<CkptError> for PipelineError {
    fn from(e: CkptError) -> Self {
        match e {
            CkptError::ParentHashMismatch { .. } | CkptError::WrongKind { .. } => {
                PipelineError::StageOrder(e.to_string())
            }
            other => PipelineError::Runtime(other.to_string()),
        }
    }
}

impl From<Box<joint::TrainError>> for PipelineError {
    fn from(e: Box<joint::TrainError>) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<unimodal::Stage2Error> for PipelineError {
    fn from(e: unimodal::Stage2Error) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

/// Everything needed to reproduce a stage invocation bit-for-bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config: cfg.resolved(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn record_input(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.inputs
            .insert(path.display().to_string(), ckpt::file_hash(path)?);
        Ok(())
    }

    fn record_output(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.outputs
            .insert(path.display().to_string(), ckpt::file_hash(path)?);
        Ok(())
    }

    /// Writes `<primary>.manifest.json`.
    fn write(&self, primary: &Path) -> Result<PathBuf, PipelineError> {
        let path = manifest_path(primary);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut os = primary.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn require_file(path: &Path, role: &str) -> Result<(), PipelineError> {
    if !path.exists() {
        return Err(PipelineError::StageOrder(format!(
            "missing {role}: {} (run the earlier stage first)",
            path.display()
        )));
    }
    Ok(())
}

fn expect_kind(meta: &CheckpointMeta, expected: &str) -> Result<(), PipelineError> {
    if meta.kind != expected {
        return Err(PipelineError::from(CkptError::WrongKind {
            expected: expected.to_string(),
            found: meta.kind.clone(),
        }));
    }
    Ok(())
}

fn spec_value<T: serde::de::DeserializeOwned>(
    meta: &CheckpointMeta,
    key: &str,
) -> Result<T, PipelineError> {
    let value = meta
        .hyper
        .get(key)
        .ok_or_else(|| PipelineError::Runtime(format!("checkpoint metadata lacks `{key}`")))?;
    Ok(serde_json::from_value(value.clone())?)
}

/// Toy-scale joint model shape from the config.
pub fn joint_spec_from_config(cfg: &RunConfig) -> Result<JointVaeSpec, PipelineError> {
    let mut spec = JointVaeSpec::toy_default(cfg.get_usize("joint.d_z")?, cfg.get_f64("joint.beta")?);
    spec.lambdas = vec![
        cfg.get_f64("joint.lambda.square")?,
        cfg.get_f64("joint.lambda.circle")?,
    ];
    if !cfg.get_bool("joint.merge")? {
        spec.trunk_hidden = Vec::new();
    }
    Ok(spec)
}

fn stage2_config(cfg: &RunConfig, mode: ConditioningMode) -> Result<Stage2Config, PipelineError> {
    let mut out = Stage2Config::toy_default(mode, cfg.get_u64("flows.seed")?);
    out.epochs = cfg.get_usize("flows.epochs")?;
    out.batch_size = cfg.get_usize("flows.batch")?;
    out.learning_rate = cfg.get_f64("flows.lr")?;
    out.n_flows = cfg.get_usize("flows.n_flows")?;
    out.samples_per_datapoint = cfg.get_usize("flows.samples_per_datapoint")?;
    out.context_dim = cfg.get_usize("flows.context_dim")?;
    Ok(out)
}

/// Serialized stage-2 structure (enough to rebuild before loading params).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage2Spec {
    pub mode: ConditioningMode,
    pub n_flows: usize,
    pub context_dim: usize,
    pub context_hidden: Vec<usize>,
    pub made_hidden: Vec<usize>,
    pub base_hidden: Vec<usize>,
    pub input_dims: Vec<usize>,
    pub d_z: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub method: ProjectorMethod,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub input_dims: Vec<usize>,
}

// ----- checkpoint save/load per model kind ------------------------------

pub fn save_joint(
    path: &Path,
    model: &JointVae,
    spec: &JointVaeSpec,
    seed: u64,
) -> Result<(), PipelineError> {
    let mut meta = CheckpointMeta::new(KIND_JOINT, seed);
    meta.hyper.insert("spec".into(), serde_json::to_value(spec)?);
    ckpt::save_checkpoint(path, &meta, &model.named_params())?;
    Ok(())
}

pub fn load_joint(path: &Path) -> Result<(JointVae, CheckpointMeta), PipelineError> {
    require_file(path, "stage-1 checkpoint")?;
    let (meta, params) = ckpt::load_checkpoint(path)?;
    expect_kind(&meta, KIND_JOINT)?;
    let spec: JointVaeSpec = spec_value(&meta, "spec")?;
    let mut model = JointVae::new(&spec);
    ckpt::apply_params(&mut model, &params)?;
    Ok((model, meta))
}

pub fn save_posteriors(
    path: &Path,
    model: &UnimodalPosteriors,
    spec: &Stage2Spec,
    joint_hash: String,
    projector_hash: Option<String>,
) -> Result<(), PipelineError> {
    let mut meta = CheckpointMeta::new(KIND_POSTERIORS, spec.seed);
    meta.parent_hash = Some(joint_hash);
    meta.hyper.insert("spec".into(), serde_json::to_value(spec)?);
    if let Some(h) = projector_hash {
        meta.hyper.insert("projector_hash".into(), serde_json::json!(h));
    }
    ckpt::save_checkpoint(path, &meta, &model.named_params())?;
    Ok(())
}

pub fn load_posteriors(
    path: &Path,
) -> Result<(UnimodalPosteriors, Stage2Spec, CheckpointMeta), PipelineError> {
    require_file(path, "stage-2 checkpoint")?;
    let (meta, params) = ckpt::load_checkpoint(path)?;
    expect_kind(&meta, KIND_POSTERIORS)?;
    let spec: Stage2Spec = spec_value(&meta, "spec")?;
    let cfg = Stage2Config {
        epochs: 0,
        batch_size: 1,
        learning_rate: 0.0,
        n_flows: spec.n_flows,
        mode: spec.mode,
        samples_per_datapoint: 1,
        seed: spec.seed,
        context_dim: spec.context_dim,
        context_hidden: spec.context_hidden.clone(),
        made_hidden: spec.made_hidden.clone(),
        base_hidden: spec.base_hidden.clone(),
    };
    let mut model = unimodal::build_posteriors(spec.d_z, &spec.input_dims, &cfg);
    ckpt::apply_params(&mut model, &params)?;
    Ok((model, spec, meta))
}

pub fn save_projectors(
    path: &Path,
    model: &ProjectorSet,
    spec: &ProjectorSpec,
    seed: u64,
) -> Result<(), PipelineError> {
    let mut meta = CheckpointMeta::new(KIND_PROJECTORS, seed);
    meta.hyper.insert("spec".into(), serde_json::to_value(spec)?);
    ckpt::save_checkpoint(path, &meta, &model.named_params())?;
    Ok(())
}

pub fn load_projectors(path: &Path) -> Result<(ProjectorSet, CheckpointMeta), PipelineError> {
    require_file(path, "projector checkpoint")?;
    let (meta, params) = ckpt::load_checkpoint(path)?;
    expect_kind(&meta, KIND_PROJECTORS)?;
    let spec: ProjectorSpec = spec_value(&meta, "spec")?;
    let mut model = ProjectorSet {
        projectors: spec
            .input_dims
            .iter()
            .map(|&dim| {
                let mut dims = vec![dim];
                dims.extend_from_slice(&spec.hidden);
                dims.push(spec.k);
                crate::nn::Mlp::zeros(&dims, crate::nn::Activation::Tanh, crate::nn::Activation::Identity)
            })
            .collect(),
        method: spec.method,
        k: spec.k,
    };
    ckpt::apply_params(&mut model, &params)?;
    Ok((model, meta))
}

// ----- pipeline stages ---------------------------------------------------

/// Generates a dataset file. `n`/`seed` default to the config values.
pub fn run_gen_data(
    cfg: &RunConfig,
    n: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<RunManifest, PipelineError> {
    let n = match n {
        Some(n) => n,
        None => cfg.get_usize("data.n")?,
    };
    let seed = match seed {
        Some(s) => s,
        None => cfg.get_u64("data.seed")?,
    };
    let samples = toy::generate_dataset(&ToyDatasetConfig { n_samples: n, seed })?;
    toy::write_dataset(&samples, seed, out)?;
    let mut manifest = RunManifest::new("gen-data", cfg);
    manifest.record_output(out)?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Stage 1: trains the joint model and writes the checkpoint, a loss-trace
/// CSV, and (for two-dimensional latents) a latent scatter CSV.
pub fn run_train_joint(
    cfg: &RunConfig,
    data_path: &Path,
    out: &Path,
) -> Result<RunManifest, PipelineError> {
    require_file(data_path, "dataset file")?;
    let samples = toy::read_dataset(data_path)?;
    let data = MultimodalData::from_toy(&samples);
    let spec = joint_spec_from_config(cfg)?;
    let seed = cfg.get_u64("joint.seed")?;
    let mut model = JointVae::new(&spec);
    model.init(seed);
    let train_cfg = JointTrainConfig {
        epochs: cfg.get_usize("joint.epochs")?,
        batch_size: cfg.get_usize("joint.batch")?,
        learning_rate: cfg.get_f64("joint.lr")?,
        seed,
    };
    let (model, trace) = joint::train_joint(model, &data, &train_cfg)?;
    save_joint(out, &model, &spec, seed)?;

    let mut manifest = RunManifest::new("train-joint", cfg);
    manifest.record_input(data_path)?;
    manifest.record_output(out)?;

    let loss_csv = out.with_extension("loss.csv");
    joint::write_loss_trace_csv(&trace, &loss_csv)?;
    manifest.record_output(&loss_csv)?;
    if model.d_z() == 2 {
        let scatter_csv = out.with_extension("latent.csv");
        joint::write_latent_scatter_csv(&model, &samples, &scatter_csv)?;
        manifest.record_output(&scatter_csv)?;
    }
    manifest.write(out)?;
    Ok(manifest)
}

/// Per-direction canonical correlations of the trained projectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectorReport {
    pub method: String,
    pub canonical_correlations: Vec<f64>,
    pub final_loss: f64,
}

/// Projector pretraining; writes the checkpoint and a correlation report.
pub fn run_train_projectors(
    cfg: &RunConfig,
    method: ProjectorMethod,
    data_path: &Path,
    out: &Path,
) -> Result<RunManifest, PipelineError> {
    require_file(data_path, "dataset file")?;
    let samples = toy::read_dataset(data_path)?;
    let data = MultimodalData::from_toy(&samples);
    let seed = cfg.get_u64("proj.seed")?;
    let train_cfg = ProjectorTrainConfig {
        method,
        k: cfg.get_usize("proj.k")?,
        epochs: cfg.get_usize("proj.epochs")?,
        batch_size: cfg.get_usize("proj.batch")?,
        learning_rate: cfg.get_f64("proj.lr")?,
        seed,
        eps_cov: cfg.get_f64("proj.eps_cov")?,
        tau: cfg.get_f64("proj.tau")?,
        hidden: vec![256, 256, 256],
    };
    let (set, trace) = projector::train_projectors(&data, &train_cfg)?;
    let spec = ProjectorSpec {
        method,
        k: train_cfg.k,
        hidden: train_cfg.hidden.clone(),
        input_dims: data.dims(),
    };
    save_projectors(out, &set, &spec, seed)?;

    // Correlation report over (at most) the first 5000 samples.
    let n_report = data.len().min(5000);
    let idx: Vec<usize> = (0..n_report).collect();
    let xs = data.gather(&idx);
    let e1 = set.project(0, &xs[0]);
    let e2 = set.project(1, &xs[1]);
    let report = ProjectorReport {
        method: method.to_string(),
        canonical_correlations: projector::canonical_correlations(&e1, &e2, train_cfg.eps_cov),
        final_loss: *trace.last().unwrap_or(&f64::NAN),
    };
    let report_path = out.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let mut manifest = RunManifest::new("train-projectors", cfg);
    manifest.record_input(data_path)?;
    manifest.record_output(out)?;
    manifest.record_output(&report_path)?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Stage 2: trains the per-modality posteriors against a frozen stage-1
/// checkpoint (and frozen projectors in shared mode).
pub fn run_train_flows(
    cfg: &RunConfig,
    mode: ConditioningMode,
    data_path: &Path,
    joint_path: &Path,
    projectors_path: Option<&Path>,
    out: &Path,
) -> Result<RunManifest, PipelineError> {
    require_file(data_path, "dataset file")?;
    let (joint_model, _) = load_joint(joint_path)?;
    let joint_hash = ckpt::file_hash(joint_path)?;

    let projectors = match (mode, projectors_path) {
        (ConditioningMode::Shared, Some(p)) => Some(load_projectors(p)?.0),
        (ConditioningMode::Shared, None) => {
            return Err(PipelineError::StageOrder(
                "shared mode needs --projectors (run train-projectors first)".into(),
            ))
        }
        (ConditioningMode::Raw, _) => None,
    };
    let projector_hash = match (mode, projectors_path) {
        (ConditioningMode::Shared, Some(p)) => Some(ckpt::file_hash(p)?),
        _ => None,
    };

    let samples = toy::read_dataset(data_path)?;
    let data = MultimodalData::from_toy(&samples);
    let s2_cfg = stage2_config(cfg, mode)?;
    let (model, trace) = unimodal::train_unimodal(&joint_model, &data, &s2_cfg, projectors.as_ref())?;

    let input_dims = match mode {
        ConditioningMode::Raw => data.dims(),
        ConditioningMode::Shared => vec![projectors.as_ref().unwrap().k; data.n_modalities()],
    };
    let spec = Stage2Spec {
        mode,
        n_flows: s2_cfg.n_flows,
        context_dim: s2_cfg.context_dim,
        context_hidden: s2_cfg.context_hidden.clone(),
        made_hidden: s2_cfg.made_hidden.clone(),
        base_hidden: s2_cfg.base_hidden.clone(),
        input_dims,
        d_z: joint_model.d_z(),
        seed: s2_cfg.seed,
    };
    save_posteriors(out, &model, &spec, joint_hash, projector_hash)?;

    let mut manifest = RunManifest::new("train-flows", cfg);
    manifest.record_input(data_path)?;
    manifest.record_input(joint_path)?;
    if let Some(p) = projectors_path {
        if mode == ConditioningMode::Shared {
            manifest.record_input(p)?;
        }
    }
    manifest.record_output(out)?;
    let trace_csv = out.with_extension("loss.csv");
    unimodal::write_stage2_trace_csv(&trace, &trace_csv)?;
    manifest.record_output(&trace_csv)?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Loads the stage-2 artifact with its stage-1 parent (and projectors when
/// the mode demands them), verifying every stored hash.
pub struct LoadedStack {
    pub joint: JointVae,
    pub posteriors: UnimodalPosteriors,
    pub projectors: Option<ProjectorSet>,
    pub joint_hash: String,
    pub flows_hash: String,
    pub projector_hash: Option<String>,
}

pub fn load_stack(
    joint_path: &Path,
    flows_path: &Path,
    projectors_path: Option<&Path>,
) -> Result<LoadedStack, PipelineError> {
    let (joint_model, _) = load_joint(joint_path)?;
    let (posteriors, spec, meta) = load_posteriors(flows_path)?;
    ckpt::verify_parent(&meta, joint_path)?;

    let projectors = match spec.mode {
        ConditioningMode::Raw => None,
        ConditioningMode::Shared => {
            let p = projectors_path.ok_or_else(|| {
                PipelineError::StageOrder(
                    "this stage-2 checkpoint conditions on projections; pass --projectors".into(),
                )
            })?;
            let (set, _) = load_projectors(p)?;
            if let Some(stored) = meta.hyper.get("projector_hash") {
                let stored: String = serde_json::from_value(stored.clone())?;
                let actual = ckpt::file_hash(p)?;
                if stored != actual {
                    return Err(PipelineError::StageOrder(format!(
                        "projector checkpoint hash mismatch: stage 2 was trained against {stored}, got {actual}"
                    )));
                }
            }
            Some(set)
        }
    };
    Ok(LoadedStack {
        joint_hash: ckpt::file_hash(joint_path)?,
        flows_hash: ckpt::file_hash(flows_path)?,
        projector_hash: match projectors_path {
            Some(p) if projectors.is_some() => Some(ckpt::file_hash(p)?),
            _ => None,
        },
        joint: joint_model,
        posteriors,
        projectors,
    })
}

/// Sidecar written next to a sample dump.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleReport {
    pub subset: Vec<String>,
    pub conditioning_index: usize,
    pub n_samples: usize,
    pub hmc: Option<hmc::HmcReport>,
}

/// Draws latent samples conditioned on a subset of modalities of one test
/// observation. Full subsets route through the joint encoder (exact);
/// proper subsets build the product-of-experts target and run the sampler.
pub fn run_sample(
    cfg: &RunConfig,
    joint_path: &Path,
    flows_path: &Path,
    projectors_path: Option<&Path>,
    data_path: &Path,
    condition_on: &[String],
    index: usize,
    n_samples: usize,
    out: &Path,
) -> Result<RunManifest, PipelineError> {
    require_file(data_path, "dataset file")?;
    let stack = load_stack(joint_path, flows_path, projectors_path)?;
    let samples = toy::read_dataset(data_path)?;
    if index >= samples.len() {
        return Err(PipelineError::Runtime(format!(
            "sample index {index} out of range (dataset has {})",
            samples.len()
        )));
    }
    let mut subset = Vec::new();
    for name in condition_on {
        let Some(j) = MODALITIES.iter().position(|m| m == name) else {
            return Err(PipelineError::Runtime(format!(
                "unknown modality `{name}`; available: {}",
                MODALITIES.join(", ")
            )));
        };
        if !subset.contains(&j) {
            subset.push(j);
        }
    }
    if subset.is_empty() {
        return Err(PipelineError::Runtime("condition on at least one modality".into()));
    }

    let sample = &samples[index];
    let seed = cfg.get_u64("hmc.seed")?;
    let (z, hmc_report) = if subset.len() == MODALITIES.len() {
        // Full observation: the joint encoder is exact here.
        let xs: Vec<Tensor> = (0..MODALITIES.len())
            .map(|j| Tensor::new(vec![1, toy::IMAGE_PIXELS], sample.image(j).to_vec()))
            .collect();
        let (mu, lv) = stack.joint.encode_tensor(&xs);
        let mut rng = stream_rng(seed, 90);
        let eps = crate::rng::normal_tensor(&[n_samples, stack.joint.d_z()], &mut rng);
        let mut z = Tensor::zeros(&[n_samples, stack.joint.d_z()]);
        for r in 0..n_samples {
            for k in 0..stack.joint.d_z() {
                z.data_mut()[r * stack.joint.d_z() + k] =
                    mu.data()[k] + (0.5 * lv.data()[k]).exp() * eps.data()[r * stack.joint.d_z() + k];
            }
        }
        (z, None)
    } else {
        let experts: Vec<BoundExpert<'_>> = subset
            .iter()
            .map(|&j| {
                let x = Tensor::new(vec![1, toy::IMAGE_PIXELS], sample.image(j).to_vec());
                BoundExpert::new(
                    &stack.posteriors.posteriors[j],
                    &x,
                    stack.posteriors.projector_for(j, stack.projectors.as_ref()),
                )
            })
            .collect();
        let target = SubsetPosteriorTarget::new(experts, stack.joint.d_z());
        let hmc_cfg = HmcConfig {
            n_transitions: cfg.get_usize("hmc.transitions")?,
            leapfrog_steps: cfg.get_usize("hmc.leapfrog")?,
            step_size: cfg.get_f64("hmc.step_size")?,
            warmup_transitions: cfg.get_usize("hmc.warmup")?,
            seed,
        };
        let init = target.init_positions(n_samples, seed);
        let (z, report) = hmc::sample_target(&target, init, &hmc_cfg);
        (z, Some(report))
    };

    // CSV dump: z1..zd header then one row per sample.
    {
        use std::io::Write;
        let d = stack.joint.d_z();
        let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
        let header: Vec<String> = (1..=d).map(|k| format!("z{k}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in z.data().chunks_exact(d) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
    }
    let report = SampleReport {
        subset: subset.iter().map(|&j| MODALITIES[j].to_string()).collect(),
        conditioning_index: index,
        n_samples,
        hmc: hmc_report,
    };
    let report_path = out.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let mut manifest = RunManifest::new("sample", cfg);
    manifest.record_input(data_path)?;
    manifest.record_input(joint_path)?;
    manifest.record_input(flows_path)?;
    if let Some(p) = projectors_path {
        manifest.record_input(p)?;
    }
    manifest.record_output(out)?;
    manifest.record_output(&report_path)?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Full evaluation: coherence + Fréchet report, optional image panels.
pub fn run_eval(
    cfg: &RunConfig,
    joint_path: &Path,
    flows_path: &Path,
    projectors_path: Option<&Path>,
    test_data_path: &Path,
    report_out: &Path,
    grids_dir: Option<&Path>,
) -> Result<RunManifest, PipelineError> {
    require_file(test_data_path, "held-out dataset file")?;
    let stack = load_stack(joint_path, flows_path, projectors_path)?;
    let test = toy::read_dataset(test_data_path)?;
    let eval_cfg = EvalConfig {
        n_conditional: cfg.get_usize("eval.n")?,
        n_joint: cfg.get_usize("eval.n")?,
        seed: cfg.get_u64("eval.seed")?,
    };
    let mut report = eval::evaluate_pipeline(
        &stack.joint,
        &stack.posteriors,
        stack.projectors.as_ref(),
        &test,
        &eval_cfg,
    )?;
    report.checkpoint_hashes.insert("joint".into(), stack.joint_hash.clone());
    report.checkpoint_hashes.insert("flows".into(), stack.flows_hash.clone());
    if let Some(h) = &stack.projector_hash {
        report.checkpoint_hashes.insert("projectors".into(), h.clone());
    }
    std::fs::write(report_out, serde_json::to_string_pretty(&report)?)?;

    let mut manifest = RunManifest::new("eval", cfg);
    manifest.record_input(test_data_path)?;
    manifest.record_input(joint_path)?;
    manifest.record_input(flows_path)?;
    if let Some(p) = projectors_path {
        manifest.record_input(p)?;
    }
    manifest.record_output(report_out)?;

    if let Some(dir) = grids_dir {
        std::fs::create_dir_all(dir)?;
        write_panels(&stack, &test, &eval_cfg, dir, &mut manifest)?;
    }
    manifest.write(report_out)?;
    Ok(manifest)
}

/// Image panels: a strip of conditioning inputs and the cross-modal
/// generations they drive, plus a joint-generation grid per modality.
fn write_panels(
    stack: &LoadedStack,
    test: &[toy::ShapeSample],
    eval_cfg: &EvalConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let n_show = 8usize.min(test.len());
    let data = MultimodalData::from_toy(test);
    let idx: Vec<usize> = (0..n_show).collect();
    let xs = data.gather(&idx);
    for from in 0..MODALITIES.len() {
        for to in 0..MODALITIES.len() {
            if from == to {
                continue;
            }
            let projector = stack.posteriors.projector_for(from, stack.projectors.as_ref());
            let z = stack.posteriors.posteriors[from].sample(
                &xs[from],
                projector,
                1,
                eval_cfg.seed,
                (300 + from) as u64,
            );
            let decoded = stack.joint.decode_tensor(&z);
            let cond_path = dir.join(format!("cond_{}.pgm", MODALITIES[from]));
            let gen_path =
                dir.join(format!("gen_{}_from_{}.pgm", MODALITIES[to], MODALITIES[from]));
            eval::write_pgm_mosaic(&xs[from], n_show, &cond_path)?;
            eval::write_pgm_mosaic(&decoded[to], n_show, &gen_path)?;
            manifest.record_output(&cond_path)?;
            manifest.record_output(&gen_path)?;
        }
    }
    let z = stack.joint.prior.sample(n_show, &mut stream_rng(eval_cfg.seed, 60));
    let decoded = stack.joint.decode_tensor(&z);
    for (j, name) in MODALITIES.iter().enumerate() {
        let path = dir.join(format!("joint_{name}.pgm"));
        eval::write_pgm_mosaic(&decoded[j], n_show, &path)?;
        manifest.record_output(&path)?;
    }
    Ok(())
}
