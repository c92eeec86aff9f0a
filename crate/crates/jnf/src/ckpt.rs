//! Binary checkpoints with bit-exact round trips.
//!
//! Layout: the 8-byte magic `JNFCKPT1`, a little-endian `u32` metadata
//! length, UTF-8 JSON metadata, then zero or more parameter records until
//! end of file. Each record is `[u16 name length][name][u8 rank]
//! [rank × u32 dims][∏dims × f64 values]`, everything little-endian.
//! Values round-trip exactly (raw IEEE-754 bits), and stage links are
//! verified through SHA-256 content hashes stored in the metadata.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::Parametrized;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"JNFCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Model family stored in this file (`joint-vae`, `flow-posteriors`,
    /// `projectors`).
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    /// Content hash of the checkpoint this one was trained against.
    pub parent_hash: Option<String>,
    /// Model-specific structure, enough to rebuild shapes before loading.
    pub hyper: BTreeMap<String, serde_json::Value>,
}

impl CheckpointMeta {
    pub fn new(kind: &str, seed: u64) -> Self {
        CheckpointMeta {
            kind: kind.to_string(),
            version: FORMAT_VERSION,
            seed,
            parent_hash: None,
            hyper: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: not a checkpoint file")]
    BadMagic,
    #[error("truncated checkpoint at byte {offset}: {context}")]
    Truncated { offset: usize, context: String },
    #[error("format version {found} is incompatible with {FORMAT_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("metadata is not valid JSON: {0}")]
    BadMetadata(#[from] serde_json::Error),
    #[error("checkpoint kind `{found}` where `{expected}` was required")]
    WrongKind { expected: String, found: String },
    #[error("parent checkpoint hash mismatch: stored {stored}, actual {actual}")]
    ParentHashMismatch { stored: String, actual: String },
    #[error("checkpoint lacks parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Serializes metadata and named parameters to `path`.
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    params: &[(String, &Tensor)],
) -> Result<(), CkptError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta_json = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads metadata and every parameter record.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>), CkptError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut offset = 0usize;

    let take = |offset: &mut usize, len: usize, context: &str| -> Result<&[u8], CkptError> {
        if *offset + len > bytes.len() {
            return Err(CkptError::Truncated { offset: *offset, context: context.to_string() });
        }
        let slice = &bytes[*offset..*offset + len];
        *offset += len;
        Ok(slice)
    };

    if take(&mut offset, 8, "magic")? != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let meta_len = u32::from_le_bytes(take(&mut offset, 4, "metadata length")?.try_into().unwrap())
        as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut offset, meta_len, "metadata")?)?;
    if meta.version != FORMAT_VERSION {
        return Err(CkptError::VersionMismatch { found: meta.version });
    }

    let mut params = BTreeMap::new();
    while offset < bytes.len() {
        let name_len =
            u16::from_le_bytes(take(&mut offset, 2, "record name length")?.try_into().unwrap())
                as usize;
        let name = String::from_utf8_lossy(take(&mut offset, name_len, "record name")?).to_string();
        let rank = take(&mut offset, 1, "record rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(
                take(&mut offset, 4, "record dims")?.try_into().unwrap(),
            ) as usize);
        }
        let numel: usize = shape.iter().product();
        let data_bytes = take(&mut offset, numel * 8, "record values")?;
        let data: Vec<f64> = data_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(shape, data));
    }
    Ok((meta, params))
}

/// SHA-256 of the file contents, hex-encoded.
pub fn file_hash(path: &Path) -> Result<String, CkptError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Copies loaded parameters into a freshly built model, insisting on an
/// exact name and shape match.
pub fn apply_params(
    model: &mut impl Parametrized,
    params: &BTreeMap<String, Tensor>,
) -> Result<(), CkptError> {
    for (name, slot) in model.named_params_mut() {
        let stored = params
            .get(&name)
            .ok_or_else(|| CkptError::MissingParam(name.clone()))?;
        if stored.shape() != slot.shape() {
            return Err(CkptError::ShapeMismatch {
                name,
                expected: slot.shape().to_vec(),
                found: stored.shape().to_vec(),
            });
        }
        *slot = stored.clone();
    }
    Ok(())
}

/// Checks a stored parent hash against the actual hash of the parent file.
pub fn verify_parent(meta: &CheckpointMeta, parent_path: &Path) -> Result<(), CkptError> {
    if let Some(stored) = &meta.parent_hash {
        let actual = file_hash(parent_path)?;
        if *stored != actual {
            return Err(CkptError::ParentHashMismatch { stored: stored.clone(), actual });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::rng::stream_rng;

    fn sample_model() -> Mlp {
        let mut m = Mlp::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity);
        m.init(&mut stream_rng(1, 0));
        m
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = sample_model();
        let mut meta = CheckpointMeta::new("test-model", 7);
        meta.hyper.insert("lr".into(), serde_json::json!(1e-3));
        save_checkpoint(&p1, &meta, &model.named_params()).unwrap();

        let (meta2, params) = load_checkpoint(&p1).unwrap();
        let mut model2 = Mlp::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity);
        apply_params(&mut model2, &params).unwrap();
        save_checkpoint(&p2, &meta2, &model2.named_params()).unwrap();

        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for ((_, a), (_, b)) in model.named_params().iter().zip(model2.named_params().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        let model = sample_model();
        let meta = CheckpointMeta::new("test-model", 0);
        save_checkpoint(&p, &meta, &model.named_params()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 9]).unwrap();
        match load_checkpoint(&p) {
            Err(CkptError::Truncated { offset, .. }) => assert!(offset > 0),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.ckpt");
        std::fs::write(&p, b"NOTACKPT____").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CkptError::BadMagic)));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        let model = sample_model();
        let mut meta = CheckpointMeta::new("test-model", 0);
        meta.version = 99;
        save_checkpoint(&p, &meta, &model.named_params()).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(CkptError::VersionMismatch { found: 99 })
        ));
    }

    #[test]
    fn parent_hash_verification() {
        let dir = tempfile::tempdir().unwrap();
        let parent = dir.path().join("parent.ckpt");
        let other = dir.path().join("other.ckpt");
        let model = sample_model();
        save_checkpoint(&parent, &CheckpointMeta::new("stage-1", 0), &model.named_params())
            .unwrap();
        let model_b = {
            let mut m = sample_model();
            m.layers[0].bias = Tensor::vector(vec![9.0; 5]);
            m
        };
        save_checkpoint(&other, &CheckpointMeta::new("stage-1", 0), &model_b.named_params())
            .unwrap();

        let mut child_meta = CheckpointMeta::new("stage-2", 0);
        child_meta.parent_hash = Some(file_hash(&parent).unwrap());
        verify_parent(&child_meta, &parent).unwrap();
        assert!(matches!(
            verify_parent(&child_meta, &other),
            Err(CkptError::ParentHashMismatch { .. })
        ));
    }

    #[test]
    fn missing_and_mismatched_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let model = sample_model();
        save_checkpoint(&p, &CheckpointMeta::new("test-model", 0), &model.named_params())
            .unwrap();
        let (_, params) = load_checkpoint(&p).unwrap();
        let mut wrong_shape = Mlp::zeros(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        assert!(matches!(
            apply_params(&mut wrong_shape, &params),
            Err(CkptError::ShapeMismatch { .. })
        ));
        let mut extra = Mlp::zeros(&[3, 5, 2, 2], Activation::Tanh, Activation::Identity);
        assert!(matches!(
            apply_params(&mut extra, &params),
            Err(CkptError::MissingParam(_))
        ));
    }
}
