//! Versioned JSON checkpoint: hyperparameters plus every tensor with its name,
//! explicit shape, and row-major data. Floats are written in shortest
//! round-trip form, so save → load is bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{HyperParams, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "loop-pe-checkpoint";

/// Provenance stamped into every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub tool: String,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    meta: CheckpointMeta,
    hyper: HyperParams,
    tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    let tensors = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| TensorRecord {
            name,
            shape: [t.nrows(), t.ncols()],
            data: t.transpose().as_slice().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT_TAG.to_string(),
        version: CHECKPOINT_VERSION,
        meta: meta.clone(),
        hyper: params.hyper,
        tensors,
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!("unknown format tag `{}`", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    file.hyper.validate()?;
    let mut params = ModelParams::zeros(file.hyper);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            names.len(),
            file.tensors.len()
        )));
    }
    for ((slot, name), record) in params.tensors_mut().into_iter().zip(&names).zip(&file.tensors) {
        if &record.name != name {
            return Err(Error::Checkpoint(format!(
                "expected tensor `{name}`, found `{}`",
                record.name
            )));
        }
        let [rows, cols] = record.shape;
        if (rows, cols) != slot.shape() || record.data.len() != rows * cols {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?} with {} values, expected {:?}",
                record.shape,
                record.data.len(),
                slot.shape()
            )));
        }
        *slot = DMatrix::from_row_slice(rows, cols, &record.data);
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    Ok((params, file.meta))
}
