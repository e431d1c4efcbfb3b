//! Checkpoint persistence: little-endian f32 parameter blob + JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use gradcore::ParamVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lm::{ModelConfig, Transformer};

/// A parameter snapshot with its config and lineage tag (M_0, M_1, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration_tag: String,
    pub params: ParamVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub iteration_tag: String,
    pub param_count: usize,
    pub sha256: String,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, iteration_tag: impl Into<String>, params: ParamVector) -> Self {
        Self { config, iteration_tag: iteration_tag.into(), params }
    }
}

/// Rounds every entry through f32, so live parameters equal what a save/load
/// round-trip would produce.
pub fn quantize_to_f32(params: &mut ParamVector) {
    for v in params.values_mut() {
        *v = *v as f32 as f64;
    }
}

fn blob_bytes(params: &ParamVector) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for &v in params.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

pub fn blob_sha256(params: &ParamVector) -> String {
    hex::encode(Sha256::digest(blob_bytes(params)))
}

/// Writes `<stem>.bin` (f32 LE blob) and `<stem>.json` (manifest).
pub fn save_checkpoint(ckpt: &Checkpoint, stem: &Path) -> Result<CheckpointManifest> {
    let blob = blob_bytes(&ckpt.params);
    let manifest = CheckpointManifest {
        config: ckpt.config.clone(),
        iteration_tag: ckpt.iteration_tag.clone(),
        param_count: ckpt.params.len(),
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    let bin_path = stem.with_extension("bin");
    let json_path = stem.with_extension("json");
    if let Some(parent) = bin_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&bin_path, &blob).map_err(|e| Error::io(&bin_path, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(manifest)
}

/// Loads and verifies a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(stem: &Path) -> Result<Checkpoint> {
    let bin_path: PathBuf = stem.with_extension("bin");
    let json_path: PathBuf = stem.with_extension("json");
    let manifest_text =
        fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&manifest_text)?;
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;

    let digest = hex::encode(Sha256::digest(&blob));
    if digest != manifest.sha256 {
        return Err(Error::Data(format!(
            "checkpoint blob hash mismatch for {}: manifest {} actual {digest}",
            bin_path.display(),
            manifest.sha256
        )));
    }
    if blob.len() != manifest.param_count * 4 {
        return Err(Error::Data(format!(
            "checkpoint blob length {} does not match param_count {}",
            blob.len(),
            manifest.param_count
        )));
    }
    let model = Transformer::new(manifest.config.clone())?;
    if model.param_count() != manifest.param_count {
        return Err(Error::Data(format!(
            "param_count {} does not match config-derived size {}",
            manifest.param_count,
            model.param_count()
        )));
    }
    let mut values = Vec::with_capacity(manifest.param_count);
    for chunk in blob.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    let params = ParamVector::new(values, model.layout().clone())?;
    Ok(Checkpoint::new(manifest.config, manifest.iteration_tag, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::init_params;

    #[test]
    fn save_load_roundtrip_preserves_quantized_params() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 8, layers: 1, model_dim: 8, heads: 2, seed: 21 };
        let mut params = init_params(&cfg).unwrap();
        quantize_to_f32(&mut params);
        let ckpt = Checkpoint::new(cfg, "M0", params.clone());

        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("M0");
        let manifest = save_checkpoint(&ckpt, &stem).unwrap();
        assert_eq!(manifest.param_count, params.len());

        let loaded = load_checkpoint(&stem).unwrap();
        assert_eq!(loaded.iteration_tag, "M0");
        assert_eq!(loaded.params.values(), params.values());
        assert_eq!(blob_sha256(&loaded.params), manifest.sha256);
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let cfg = ModelConfig { vocab_size: 16, context_len: 8, layers: 1, model_dim: 8, heads: 2, seed: 22 };
        let params = init_params(&cfg).unwrap();
        let ckpt = Checkpoint::new(cfg, "M0", params);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        save_checkpoint(&ckpt, &stem).unwrap();

        let bin = stem.with_extension("bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&bin, bytes).unwrap();
        assert!(load_checkpoint(&stem).is_err());
    }
}
