//! Checkpoint container.
//!
//! Layout: the 8-byte magic, a little-endian `u32` header length, a JSON
//! header, then every tensor's values as raw little-endian `f64` in header
//! order. The header names each tensor with its shape, and records the
//! network configuration, the RNG algorithm and free-form metadata.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRPOLICY";
pub const CHECKPOINT_VERSION: &str = "1.0";
const MAJOR: u32 = 1;
pub const RNG_ID: &str = "chacha8";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    rng: String,
    config: PolicyConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Parameters plus free-form metadata (epoch, seed, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &PolicyParams, meta: &serde_json::Value) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION.into(),
        rng: RNG_ID.into(),
        config: params.config,
        tensors: params
            .names()
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape() })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("checkpoint header too large".into()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for t in &params.tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for a checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a policy checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let major = header.version.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(MAJOR) {
        return Err(Error::VersionMismatch { found: header.version, expected: MAJOR });
    }
    if header.rng != RNG_ID {
        return Err(Error::Format(format!("checkpoint uses RNG '{}', expected '{RNG_ID}'", header.rng)));
    }
    let mut named = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for e in header.tensors {
        let [rows, cols] = e.shape;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("checkpoint truncated in tensor '{}'", e.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        named.push((e.name, Tensor::new(rows, cols, data)));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    Ok(Checkpoint { params: PolicyParams::from_named(header.config, named)?, meta: header.meta })
}
