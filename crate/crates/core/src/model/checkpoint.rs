//! Checkpoint layout:
//!
//! ```text
//! <dir>/manifest.json         config, seed, parameter index
//! <dir>/params/<name>.f64     raw little-endian f64, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamGroup};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
    file: String,
}

pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
    let mut entries = Vec::with_capacity(model.params.len());
    for p in &model.params {
        let file = format!("params/{}.f64", p.name);
        let path = dir.join(&file);
        fs::write(&path, p.tensor.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            group: p.group.label(),
            shape: p.tensor.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        seed: model.seed,
        params: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        context: "checkpoint manifest".into(),
        source,
    })?;
    let path = dir.join("manifest.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: format!("{}", path.display()),
        source,
    })?;
    if manifest.format_version > CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let mut model = Model::new(manifest.config, manifest.seed)?;
    if manifest.params.len() != model.params.len() {
        return Err(Error::corrupt(
            &path,
            format!(
                "{} parameters listed, config implies {}",
                manifest.params.len(),
                model.params.len()
            ),
        ));
    }
    for entry in &manifest.params {
        let idx = model
            .param_index(&entry.name)
            .ok_or_else(|| Error::corrupt(&path, format!("unexpected parameter {}", entry.name)))?;
        let slot = &mut model.params[idx];
        if ParamGroup::parse(&entry.group) != Some(slot.group) || entry.shape != slot.tensor.shape() {
            return Err(Error::corrupt(&path, format!("metadata mismatch for {}", entry.name)));
        }
        let blob_path = dir.join(&entry.file);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        slot.tensor = Tensor::from_le_bytes(entry.shape.clone(), &bytes)
            .map_err(|e| Error::corrupt(&blob_path, e.to_string()))?;
    }
    Ok(model)
}
