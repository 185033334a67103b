//! Checkpoint files: magic `b"XCK1"`, a little-endian `u32` header length,
//! the JSON header, then the parameters as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConvAttnConfig, ConvAttnModel, Metrics, Trainable};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"XCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: ConvAttnConfig,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub metrics: Option<Metrics>,
    pub n_params: usize,
}

pub fn save_checkpoint(
    model: &ConvAttnModel,
    seed: u64,
    epoch: usize,
    metrics: Option<Metrics>,
    path: &Path,
) -> Result<()> {
    let header = CheckpointHeader {
        architecture: model.config().clone(),
        seed,
        epoch,
        metrics,
        n_params: model.num_params(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + json.len() + 8 * header.n_params);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ConvAttnModel)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format { path: path.into(), reason: reason.into() };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?)?;
    let blob = &bytes[8 + hlen..];
    if blob.len() != 8 * header.n_params {
        return Err(bad("parameter blob length does not match header"));
    }
    let params = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let model = ConvAttnModel::from_params(header.architecture.clone(), params)?;
    Ok((header, model))
}
