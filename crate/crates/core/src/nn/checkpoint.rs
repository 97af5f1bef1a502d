//! Checkpoints: one safetensors file holding the weights, with the config,
//! λ index and stage cursor in its metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{build_model, CodecModel};
use crate::config::ModelConfig;
use crate::error::{NvcError, Result};

const FORMAT: &str = "nvc-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub lambda_index: usize,
    /// Index of the first schedule stage not yet run.
    pub stage_cursor: usize,
    pub seed: u64,
}

pub fn save_checkpoint(model: &CodecModel, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    if &meta.config != model.config() {
        return Err(NvcError::Checkpoint("metadata config differs from the model's".into()));
    }
    let mut m = BTreeMap::new();
    m.insert("format".to_string(), FORMAT.to_string());
    m.insert("meta".to_string(), serde_json::to_string(meta)?);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.store().save(path, m)
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    if !path.exists() {
        return Err(NvcError::MissingCheckpoint(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| NvcError::Checkpoint(e.to_string()))?;
    let md = header.metadata().clone().unwrap_or_default();
    if md.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(NvcError::Checkpoint(format!("{} is not an {FORMAT} file", path.display())));
    }
    let meta = md.get("meta").ok_or_else(|| NvcError::Checkpoint("metadata has no `meta` entry".into()))?;
    Ok(serde_json::from_str(meta)?)
}

/// Rebuilds the model described by the checkpoint and loads its weights.
pub fn load_checkpoint(path: &Path) -> Result<(CodecModel, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let mut model = build_model(&meta.config, meta.seed)?;
    model.store_mut().load(path)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MODULE_NAMES;

    #[test]
    fn round_trip_restores_weights_and_cursor() {
        let cfg = ModelConfig::toy();
        let a = build_model(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("m.safetensors");
        let meta = CheckpointMeta { config: cfg.clone(), lambda_index: 3, stage_cursor: 12, seed: 1 };
        save_checkpoint(&a, &path, &meta).unwrap();
        let (b, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta);
        for n in MODULE_NAMES {
            assert_eq!(a.store().checksum(n).unwrap(), b.store().checksum(n).unwrap());
        }
        let fresh = build_model(&cfg, 2).unwrap();
        assert_ne!(fresh.store().checksum("tcm").unwrap(), a.store().checksum("tcm").unwrap());
    }

    #[test]
    fn missing_and_foreign_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(NvcError::MissingCheckpoint(_))));
        let p = dir.path().join("junk");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
