//! Checkpoint archive: magic `PXGC`, little-endian `u64` index length, a
//! JSON index `{config, step, tensors: {name: {offset, shape}}}`, then one
//! `PXG1` blob per parameter. Offsets count from the first blob byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{pxg_len, read_pxg, write_pxg, Tensor};
use crate::error::{Error, Result};
use crate::graphmodel::{GraphModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PXGC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub config: ModelConfig,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: usize,
    pub tensors: BTreeMap<String, TensorEntry>,
}

pub fn encode_checkpoint(model: &GraphModel<f32>, step: usize) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    let mut blobs = Vec::new();
    for (_, p) in model.params().iter() {
        tensors.insert(
            p.name.clone(),
            TensorEntry {
                offset: blobs.len(),
                shape: p.value.shape().to_vec(),
            },
        );
        write_pxg(&p.value, &mut blobs)?;
    }
    let index = CheckpointIndex {
        config: model.config().clone(),
        step,
        tensors,
    };
    let json = serde_json::to_vec(&index)?;
    let mut out = Vec::with_capacity(12 + json.len() + blobs.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs);
    Ok(out)
}

/// Writes atomically: the archive goes to a sibling temporary file that is
/// then renamed over `path`, so an interrupted write keeps the old file.
pub fn save_checkpoint(model: &GraphModel<f32>, step: usize, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, step)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(GraphModel<f32>, CheckpointIndex)> {
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint archive (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = &bytes[12..];
    if len > body.len() {
        return Err(bad("truncated index"));
    }
    let index: CheckpointIndex =
        serde_json::from_slice(&body[..len]).map_err(|e| bad(format!("index: {e}")))?;
    let blobs = &body[len..];

    let mut model = GraphModel::<f32>::build(&index.config, 0)?;
    let mut values = Vec::with_capacity(index.tensors.len());
    for (name, entry) in &index.tensors {
        let end = entry.offset + pxg_len(&entry.shape);
        if end > blobs.len() {
            return Err(bad(format!("tensor `{name}` runs past the end of the archive")));
        }
        let t: Tensor<f32> = read_pxg(&blobs[entry.offset..end])?;
        if t.shape() != entry.shape.as_slice() {
            return Err(bad(format!("tensor `{name}` disagrees with its index shape")));
        }
        values.push((name.clone(), t));
    }
    model.load_values(values)?;
    Ok((model, index))
}

pub fn load_checkpoint(path: &Path) -> Result<(GraphModel<f32>, CheckpointIndex)> {
    let bytes = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless it was built with `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<GraphModel<f32>> {
    let (model, index) = load_checkpoint(path)?;
    if &index.config != expected {
        return Err(bad(format!(
            "{} was trained with a different model configuration",
            path.display()
        )));
    }
    Ok(model)
}
