//! Flat `key = value` run configuration.
//!
//! Every key has a documented default; unknown keys are rejected so typos
//! fail loudly instead of silently training the wrong model. Section
//! prefixes (`joint.`, `flows.`, …) group the keys, and command-line
//! overrides win over file values, which win over defaults.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

/// One documented configuration key.
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

/// The full key schema. Anything not listed here is rejected.
pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "data.n", default: "20000", doc: "training samples to generate (even)" },
    KeySpec { key: "data.test_n", default: "2000", doc: "held-out samples for evaluation (even)" },
    KeySpec { key: "data.seed", default: "1", doc: "dataset generation seed" },
    KeySpec { key: "joint.d_z", default: "2", doc: "latent dimension of the joint model" },
    KeySpec { key: "joint.beta", default: "1.0", doc: "KL weight in the stage-1 loss" },
    KeySpec { key: "joint.epochs", default: "8", doc: "stage-1 training epochs" },
    KeySpec { key: "joint.batch", default: "256", doc: "stage-1 batch size" },
    KeySpec { key: "joint.lr", default: "0.001", doc: "stage-1 Adam learning rate" },
    KeySpec { key: "joint.seed", default: "1", doc: "stage-1 init/shuffle/noise seed" },
    KeySpec {
        key: "joint.merge",
        default: "true",
        doc: "merge head features through a 2-layer trunk (false = plain concatenation)",
    },
    KeySpec { key: "joint.lambda.square", default: "1.0", doc: "square-likelihood rescaling" },
    KeySpec { key: "joint.lambda.circle", default: "1.0", doc: "circle-likelihood rescaling" },
    KeySpec { key: "proj.k", default: "10", doc: "projector embedding dimension" },
    KeySpec { key: "proj.epochs", default: "6", doc: "projector training epochs" },
    KeySpec { key: "proj.batch", default: "256", doc: "projector batch size (must exceed proj.k for dcca)" },
    KeySpec { key: "proj.lr", default: "0.001", doc: "projector Adam learning rate" },
    KeySpec { key: "proj.seed", default: "1", doc: "projector training seed" },
    KeySpec { key: "proj.eps_cov", default: "0.0001", doc: "covariance regularization (dcca)" },
    KeySpec { key: "proj.tau", default: "0.1", doc: "contrastive softmax temperature" },
    KeySpec { key: "flows.n_flows", default: "2", doc: "MADE blocks per posterior flow (0 = Gaussian posterior)" },
    KeySpec { key: "flows.epochs", default: "6", doc: "stage-2 training epochs" },
    KeySpec { key: "flows.batch", default: "256", doc: "stage-2 batch size" },
    KeySpec { key: "flows.lr", default: "0.001", doc: "stage-2 Adam learning rate" },
    KeySpec { key: "flows.seed", default: "1", doc: "stage-2 seed" },
    KeySpec { key: "flows.context_dim", default: "64", doc: "context width fed to the flows" },
    KeySpec {
        key: "flows.samples_per_datapoint",
        default: "1",
        doc: "latent draws per datapoint per step",
    },
    KeySpec { key: "hmc.transitions", default: "100", doc: "accept/reject transitions per chain" },
    KeySpec { key: "hmc.leapfrog", default: "10", doc: "leapfrog steps per proposal" },
    KeySpec { key: "hmc.step_size", default: "0.05", doc: "leapfrog step size" },
    KeySpec { key: "hmc.warmup", default: "20", doc: "warm-up transitions per halving round" },
    KeySpec { key: "hmc.seed", default: "1", doc: "sampler seed" },
    KeySpec { key: "eval.n", default: "2000", doc: "generations per direction and for joint sampling" },
    KeySpec { key: "eval.seed", default: "0", doc: "evaluation seed (classifier + generation)" },
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {wanted}")]
    BadValue { key: String, value: String, wanted: &'static str },
}

/// Resolved configuration: defaults overlaid with file and CLI values.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig { values: BTreeMap::new() }
    }

    /// Parses a config file and overlays it on the defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::defaults();
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed { line: i + 1, text: raw.to_string() });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key, rejecting anything outside the schema.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|k| k.key == key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        KEYS.iter()
            .find(|k| k.key == key)
            .unwrap_or_else(|| panic!("undocumented key `{key}`"))
            .default
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            wanted: "a number",
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            wanted: "a nonnegative integer",
        })
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            value: self.get(key).into(),
            wanted: "a nonnegative integer",
        })
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(ConfigError::BadValue {
                key: key.into(),
                value: other.into(),
                wanted: "true or false",
            }),
        }
    }

    /// Every key with its effective value — what run manifests record.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.key.to_string(), self.get(k.key).to_string()))
            .collect()
    }
}
