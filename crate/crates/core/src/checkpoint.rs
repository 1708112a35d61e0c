//! Checkpoint files: a JSON index followed by concatenated MMFB records.
//!
//! Layout: `MMCK`, u32 version, u64 index length (all little-endian), the
//! UTF-8 JSON index, then one MMFB record per tensor. Offsets in the index
//! are relative to the first record.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{FusionModel, ModelConfig, ModelError};
use crate::params::ParamStore;
use crate::store::mmfb;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint index: {0}")]
    Index(String),
    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },
    #[error("checkpoint does not match the model: {0}")]
    Bind(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: u64,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes the parameters and both configs.
pub fn encode(model: &FusionModel, params: &ParamStore<f32>, train: &TrainConfig) -> Vec<u8> {
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(params.len());
    for (_, e) in params.iter() {
        let rec = mmfb::encode(&e.value);
        tensors.push(TensorEntry {
            name: e.name.clone(),
            offset: data.len() as u64,
            rows: e.value.rows(),
            cols: e.value.cols(),
            sha256: hex(&Sha256::digest(&rec)),
        });
        data.extend_from_slice(&rec);
    }
    let index = CheckpointIndex {
        model: model.cfg.clone(),
        train: train.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&index).expect("index serializes");
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn save(path: &Path, model: &FusionModel, params: &ParamStore<f32>, train: &TrainConfig) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(model, params, train)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A restored model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub index: CheckpointIndex,
    pub model: FusionModel,
    pub params: ParamStore<f32>,
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 16 {
        return Err(CheckpointError::BadMagic);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let index_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(index_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Index("index length exceeds file size".into()))?;
    let index: CheckpointIndex = serde_json::from_slice(&bytes[16..data_start]).map_err(|e| CheckpointError::Index(e.to_string()))?;
    let data = &bytes[data_start..];

    let mut params = ParamStore::new();
    for t in &index.tensors {
        let bad = |message: String| CheckpointError::Tensor {
            name: t.name.clone(),
            message,
        };
        let off = usize::try_from(t.offset).ok().filter(|&o| o <= data.len()).ok_or_else(|| bad("offset past end of file".into()))?;
        let (m, used) = mmfb::decode_prefix(&data[off..]).map_err(|e| bad(e.to_string()))?;
        if m.shape() != (t.rows, t.cols) {
            return Err(bad(format!("stored as {}×{}, index says {}×{}", m.rows(), m.cols(), t.rows, t.cols)));
        }
        if hex(&Sha256::digest(&data[off..off + used])) != t.sha256 {
            return Err(bad("checksum mismatch".into()));
        }
        params.add(&t.name, m).map_err(|e| bad(e.to_string()))?;
    }
    let model = FusionModel::bind(&params, index.model.clone())?;
    Ok(Checkpoint { index, model, params })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
