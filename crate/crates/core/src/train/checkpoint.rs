//! Model checkpoints: the tensor container plus a JSON sidecar at
//! `<path>.json`.

use std::path::{Path, PathBuf};

use entcap_tensor::{load_checkpoint, save_checkpoint};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EntityMode, Model, ModelConfig};
use crate::text::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelConfig,
    pub entity_mode: EntityMode,
    pub vocab_sha256: String,
    pub step: usize,
    pub dev_cider: f64,
    /// Echo of the run configuration that produced the checkpoint.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_model(model: &Model<f32>, sidecar: &Sidecar, path: &Path) -> Result<()> {
    save_checkpoint(&model.params, path)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

/// Loads a checkpoint, verifying that it was trained with `vocab`.
pub fn load_model(path: &Path, vocab: &Vocabulary) -> Result<(Model<f32>, Sidecar)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| Error::Config(format!("cannot read checkpoint sidecar {}: {e}", side.display())))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.vocab_sha256 != vocab.sha256() {
        return Err(Error::Validation(format!(
            "checkpoint {} was trained with a different vocabulary",
            path.display()
        )));
    }
    let params = load_checkpoint(path)?;
    let model = Model::from_params(&sidecar.model, params)?;
    if model.vocab_size() != vocab.len() {
        return Err(Error::Validation(format!(
            "checkpoint vocabulary size {} does not match {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    Ok((model, sidecar))
}
