//! `manifest.json` + `params.bin` (little-endian f32, manifest order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "mgtraj-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `params.bin`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub n_generators: usize,
    pub z_dim: usize,
    pub model: ModelConfig,
    /// Free-form model label (e.g. the baseline name).
    pub kind: String,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    kind: &str,
    config_hash: &str,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(model.store.num_scalars() * 4);
    let mut tensors = Vec::with_capacity(model.store.len());
    for id in model.store.ids() {
        let t = model.store.get(id);
        tensors.push(TensorEntry {
            name: model.store.name(id).to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset: bytes.len(),
        });
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        n_generators: model.config.n_generators,
        z_dim: model.config.z_dim,
        model: model.config,
        kind: kind.into(),
        config_hash: config_hash.into(),
        tensors,
    };
    fs::write(dir.join(PARAMS_FILE), bytes)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let bad = |reason: String| Error::Format {
        what: "checkpoint",
        path: mpath.clone(),
        reason,
    };
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(&mpath)?).map_err(|e| bad(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(bad(format!("unknown format `{}`", manifest.format)));
    }
    if manifest.n_generators != manifest.model.n_generators
        || manifest.z_dim != manifest.model.z_dim
    {
        return Err(bad("header disagrees with model config".into()));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let mut model = Model::new(manifest.model, 0)?;
    if manifest.tensors.len() != model.store.len() {
        return Err(bad(format!(
            "{} tensors, model has {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(bad(format!("tensor `{}` has dtype {}", e.name, e.dtype)));
        }
        let id = model.store.id(&e.name)?;
        if model.store.get(id).shape() != e.shape.as_slice() {
            return Err(Error::shape(
                "checkpoint tensor",
                model.store.get(id).shape(),
                &e.shape,
            ));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        let raw = bytes
            .get(e.offset..end)
            .ok_or_else(|| bad(format!("tensor `{}` past end of {PARAMS_FILE}", e.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        *model.store.get_mut(id) = Tensor::new(&e.shape, data)?;
    }
    Ok((model, manifest))
}
