//! Pipeline command line: dataset generation, the two training stages,
//! projector pretraining, subset-posterior sampling, and evaluation.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 stage-order
//! violation (a missing or mismatched prerequisite checkpoint).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jnf::config::RunConfig;
use jnf::pipeline::{self, PipelineError};
use jnf::projector::ProjectorMethod;
use jnf::unimodal::ConditioningMode;

#[derive(Parser)]
#[command(
    name = "jnf",
    version,
    about = "Two-stage multimodal generative modeling on paired binary images"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set joint.beta=2.5.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired squares-and-circles dataset file.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Samples to generate (must be even); defaults to data.n.
        #[arg(long)]
        n: Option<usize>,
        /// Generation seed; defaults to data.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stage 1: train the joint model.
    TrainJoint {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// KL weight; may repeat to train one model per value (outputs get a
        /// .beta<value> suffix).
        #[arg(long)]
        beta: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        d_z: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain cross-modal projectors (shared-information mode).
    TrainProjectors {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// dcca or cl.
        #[arg(long, value_parser = parse_method)]
        method: ProjectorMethod,
    },
    /// Stage 2: fit per-modality flow posteriors to the frozen stage 1.
    TrainFlows {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint (required; omitting it is a stage-order error).
        #[arg(long)]
        joint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// raw or shared.
        #[arg(long, value_parser = parse_mode, default_value = "raw")]
        mode: ConditioningMode,
        /// Projector checkpoint (shared mode).
        #[arg(long)]
        projectors: Option<PathBuf>,
        /// MADE blocks per flow (0 = Gaussian-posterior ablation).
        #[arg(long)]
        n_flows: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw latent samples conditioned on a subset of one observation's
    /// modalities.
    Sample {
        #[arg(long)]
        joint: Option<PathBuf>,
        #[arg(long)]
        flows: Option<PathBuf>,
        #[arg(long)]
        projectors: Option<PathBuf>,
        /// Dataset file holding the conditioning observation.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated modality names (square,circle).
        #[arg(long, value_delimiter = ',')]
        condition_on: Vec<String>,
        /// Row index of the conditioning observation.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate coherence and Fréchet distances on a held-out dataset.
    Eval {
        #[arg(long)]
        joint: Option<PathBuf>,
        #[arg(long)]
        flows: Option<PathBuf>,
        #[arg(long)]
        projectors: Option<PathBuf>,
        /// Held-out dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Directory for PGM image panels (optional).
        #[arg(long)]
        grids: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<ProjectorMethod, String> {
    match s {
        "dcca" => Ok(ProjectorMethod::Dcca),
        "cl" => Ok(ProjectorMethod::Contrastive),
        other => Err(format!("unknown method `{other}` (expected dcca or cl)")),
    }
}

fn parse_mode(s: &str) -> Result<ConditioningMode, String> {
    match s {
        "raw" => Ok(ConditioningMode::Raw),
        "shared" => Ok(ConditioningMode::Shared),
        other => Err(format!("unknown mode `{other}` (expected raw or shared)")),
    }
}

fn build_config(common: &CommonArgs) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => {
            RunConfig::from_file(path).map_err(|e| PipelineError::Runtime(e.to_string()))?
        }
        None => RunConfig::defaults(),
    };
    for pair in &common.overrides {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(PipelineError::Runtime(format!(
                "--set expects KEY=VALUE, got `{pair}`"
            )));
        };
        cfg.set(k.trim(), v.trim())
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    }
    if let Ok(threads) = std::env::var("JNF_THREADS") {
        // Validated for interface stability; every stage currently runs a
        // single worker, which satisfies any cap (0 = serial).
        threads.trim().parse::<usize>().map_err(|_| {
            PipelineError::Runtime(format!("JNF_THREADS must be an integer, got `{threads}`"))
        })?;
    }
    Ok(cfg)
}

fn require(path: Option<PathBuf>, flag: &str, role: &str) -> Result<PathBuf, PipelineError> {
    path.ok_or_else(|| PipelineError::StageOrder(format!("missing {role} (pass --{flag})")))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = build_config(&cli.common)?;
    match cli.command {
        Command::GenData { out, n, seed } => {
            pipeline::run_gen_data(&cfg, n, seed, &out)?;
        }
        Command::TrainJoint { data, out, beta, epochs, d_z, seed } => {
            if let Some(e) = epochs {
                cfg.set("joint.epochs", &e.to_string()).unwrap();
            }
            if let Some(d) = d_z {
                cfg.set("joint.d_z", &d.to_string()).unwrap();
            }
            if let Some(s) = seed {
                cfg.set("joint.seed", &s.to_string()).unwrap();
            }
            if beta.len() <= 1 {
                if let Some(b) = beta.first() {
                    cfg.set("joint.beta", &b.to_string()).unwrap();
                }
                pipeline::run_train_joint(&cfg, &data, &out)?;
            } else {
                // One training run per β, suffixing each output.
                for b in beta {
                    let mut run_cfg = cfg.clone();
                    run_cfg.set("joint.beta", &b.to_string()).unwrap();
                    let mut os = out.as_os_str().to_owned();
                    os.push(format!(".beta{b}"));
                    pipeline::run_train_joint(&run_cfg, &data, &PathBuf::from(os))?;
                }
            }
        }
        Command::TrainProjectors { data, out, method } => {
            pipeline::run_train_projectors(&cfg, method, &data, &out)?;
        }
        Command::TrainFlows { data, joint, out, mode, projectors, n_flows, epochs, seed } => {
            let joint = require(joint, "joint", "stage-1 checkpoint")?;
            if let Some(n) = n_flows {
                cfg.set("flows.n_flows", &n.to_string()).unwrap();
            }
            if let Some(e) = epochs {
                cfg.set("flows.epochs", &e.to_string()).unwrap();
            }
            if let Some(s) = seed {
                cfg.set("flows.seed", &s.to_string()).unwrap();
            }
            pipeline::run_train_flows(&cfg, mode, &data, &joint, projectors.as_deref(), &out)?;
        }
        Command::Sample { joint, flows, projectors, data, condition_on, index, n, out } => {
            let joint = require(joint, "joint", "stage-1 checkpoint")?;
            let flows = require(flows, "flows", "stage-2 checkpoint")?;
            pipeline::run_sample(
                &cfg,
                &joint,
                &flows,
                projectors.as_deref(),
                &data,
                &condition_on,
                index,
                n,
                &out,
            )?;
        }
        Command::Eval { joint, flows, projectors, data, out, grids } => {
            let joint = require(joint, "joint", "stage-1 checkpoint")?;
            let flows = require(flows, "flows", "stage-2 checkpoint")?;
            pipeline::run_eval(
                &cfg,
                &joint,
                &flows,
                projectors.as_deref(),
                &data,
                &out,
                grids.as_deref(),
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
