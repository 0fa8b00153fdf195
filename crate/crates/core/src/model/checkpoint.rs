//! Checkpoint layout: one line of UTF-8 JSON (the manifest) terminated by
//! `\n`, then every tensor in `.qat` encoding, concatenated in name order.
//! Manifest offsets count from the first byte after the newline.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::qat;

pub const FORMAT: &str = "qapseg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    shape: [usize; 4],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

pub fn write_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, t) in model.params() {
        tensors.insert(
            name.clone(),
            TensorEntry {
                shape: t.shape().dims(),
                offset: blob.len(),
            },
        );
        qat::encode(t, &mut blob);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        tensors,
    };
    let mut out = serde_json::to_vec(&manifest)?;
    out.push(b'\n');
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(bytes.len(), "manifest line is not terminated"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..nl])?;
    if manifest.format != FORMAT {
        return Err(Error::parse(
            0,
            format!("unknown checkpoint format {:?}", manifest.format),
        ));
    }
    if manifest.version != VERSION {
        return Err(Error::parse(
            0,
            format!("unsupported checkpoint version {}", manifest.version),
        ));
    }
    let base = nl + 1;
    let blob = &bytes[base..];
    let mut params = BTreeMap::new();
    let mut end = 0;
    for (name, entry) in manifest.tensors {
        if entry.offset > blob.len() {
            return Err(Error::parse(
                base + entry.offset,
                format!("tensor {name} starts past end of file"),
            ));
        }
        let (t, used) = qat::decode(&blob[entry.offset..]).map_err(|e| match e {
            Error::Parse { offset, message } => {
                Error::parse(base + entry.offset + offset, format!("{name}: {message}"))
            }
            other => other,
        })?;
        if t.shape().dims() != entry.shape {
            return Err(Error::parse(
                base + entry.offset,
                format!(
                    "tensor {name} has shape {}, manifest says {:?}",
                    t.shape(),
                    entry.shape
                ),
            ));
        }
        end = end.max(entry.offset + used);
        params.insert(name, t);
    }
    if end != blob.len() {
        return Err(Error::parse(
            base + end,
            format!("{} trailing bytes", blob.len() - end),
        ));
    }
    Model::from_params(manifest.config, params)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_checkpoint(&bytes)
}
