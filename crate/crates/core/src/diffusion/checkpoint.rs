//! Checkpoint files: a magic line, a one-line JSON manifest, then every
//! tensor as little-endian f32 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, TensorInfo};
use super::vocab::Vocab;
use crate::error::ModelError;

pub const MAGIC: &[u8] = b"TOGCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorInfo>,
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        tensors: model.layout.tensors.clone(),
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&manifest).expect("manifest serializes"));
    out.push(b'\n');
    out.reserve(model.params.len() * 4);
    for &p in &model.params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint_bytes(model)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| ModelError::Checkpoint("not a checkpoint file".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ModelError::Checkpoint("manifest line is not terminated".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&rest[..nl]).map_err(|e| ModelError::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "format version {} (expected {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }
    let payload = &rest[nl + 1..];
    let vocab = Vocab::from_tokens(manifest.vocab)?;
    let mut model = Model::zeroed(manifest.config, vocab)?;
    let expected = &model.layout.tensors;
    if manifest.tensors.len() != expected.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} tensors in manifest, configuration needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for (got, want) in manifest.tensors.iter().zip(expected) {
        if got.name != want.name {
            return Err(ModelError::Tensor { name: got.name.clone(), detail: format!("expected tensor `{}`", want.name) });
        }
        if got.shape != want.shape || got.offset != want.offset {
            return Err(ModelError::Tensor {
                name: got.name.clone(),
                detail: format!("shape mismatch: file has {:?}, configuration needs {:?}", got.shape, want.shape),
            });
        }
        let end = (want.offset + want.len()) * 4;
        if payload.len() < end {
            return Err(ModelError::Tensor {
                name: want.name.clone(),
                detail: format!("payload truncated: {} bytes, tensor ends at {end}", payload.len()),
            });
        }
    }
    if payload.len() != model.layout.total * 4 {
        return Err(ModelError::Checkpoint(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            model.layout.total * 4
        )));
    }
    for (p, chunk) in model.params.iter_mut().zip(payload.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
    }
    Ok(model)
}
