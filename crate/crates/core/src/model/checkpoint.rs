use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::car::CarModel;
use super::config::{ModelConfig, Variant};
use super::vocab::Vocab;
use crate::autograd::Tensor;
use crate::data::ConditionSchema;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "car-checkpoint/v1";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Byte length.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub variant: Variant,
    pub config: ModelConfig,
    pub schema: ConditionSchema,
    pub vocab: Vocab,
    pub params: Vec<ParamEntry>,
}

/// Writes `manifest.json` and the little-endian `f64` blob `params.bin`
/// into `dir`, creating it if needed.
pub fn save_checkpoint(model: &CarModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(model.params.numel() * 8);
    let mut entries = Vec::with_capacity(model.params.len());
    for (_, name, t) in model.params.iter() {
        let offset = blob.len();
        for v in t.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: blob.len() - offset,
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        variant: model.variant,
        config: model.config.clone(),
        schema: model.schema.clone(),
        vocab: model.vocab.clone(),
        params: entries,
    };
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
            m.format
        )));
    }
    Ok(m)
}

/// Rebuilds the architecture from the manifest and overwrites every
/// parameter with the stored values.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<CarModel> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let bpath = dir.join(BLOB);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut model = CarModel::new(m.config, m.variant, m.schema, m.vocab, 0)?;
    if m.params.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, architecture has {}",
            m.params.len(),
            model.params.len()
        )));
    }
    for e in &m.params {
        let id = model
            .params
            .find(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {:?}", e.name)))?;
        let t = model.params.get(id);
        if t.shape() != e.shape.as_slice() || e.len != t.numel() * 8 {
            return Err(Error::Checkpoint(format!(
                "parameter {:?} has shape {:?} in the checkpoint, {:?} in the model",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        let bytes = blob
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| Error::Checkpoint(format!("blob too short for {:?}", e.name)))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *model.params.get_mut(id) = Tensor::new(e.shape.clone(), values)?.with_requires_grad(true);
    }
    Ok(model)
}
