//! Checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BMCK"
//! 4       2     format version, u16 little-endian
//! 6       8     payload length in bytes, u64 little-endian
//! 14      ...   payload: UTF-8 JSON of `Checkpoint`
//! ```
//!
//! Floats are written with round-trip precision, so a resumed run continues
//! bit-for-bit: parameters, every chain state and random stream, the data
//! stream, the iteration counter and the swap statistics are all included.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ModesStream;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::samplers::DeepEnsemble;
use crate::training::RbmTrainer;

use super::config::Method;

pub const MAGIC: &[u8; 4] = b"BMCK";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    Rbm(RbmTrainer),
    Deep(DeepEnsemble),
}

/// Everything a training cell needs to continue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub iteration: u64,
    pub model: ModelState,
    pub data: ModesStream,
    pub step_rng: RngStream,
    pub elapsed_seconds: f64,
    /// Updates spent on each pretrained layer before joint training.
    pub pretrain_updates: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub method: Method,
    pub seed: u64,
    pub learning_rate: f64,
    pub state: RunState,
}

pub fn encode(checkpoint: &Checkpoint) -> Vec<u8> {
    let payload = serde_json::to_vec(checkpoint).expect("checkpoint serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(bad(format!("payload is {} bytes, header says {len}", payload.len())));
    }
    serde_json::from_slice(payload).map_err(|e| bad(e.to_string()))
}

/// Writes through a temporary file and a rename so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(checkpoint)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
