use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SGAIL1";
const DTYPE: &str = "f64-le";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        NamedTensor {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON metadata (architecture, hyperparameters, provenance).
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Layout: magic, little-endian `u64` header length, JSON header, then every
/// tensor's values back to back as little-endian `f64`.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for t in &ckpt.tensors {
        entries.push(Entry {
            name: t.name.clone(),
            shape: t.tensor.shape().to_vec(),
            offset,
        });
        offset += t.tensor.len();
    }
    let header = serde_json::to_vec(&Header {
        dtype: DTYPE.into(),
        meta: ckpt.meta.clone(),
        tensors: entries,
    })?;
    let mut bytes = Vec::with_capacity(14 + header.len() + offset * 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for t in &ckpt.tensors {
        for v in t.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::malformed(path, reason);
    if bytes.len() < 14 || &bytes[..6] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(14..).ok_or_else(|| bad("truncated"))?;
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(bad(&format!("unsupported dtype {}", header.dtype)));
    }
    let blob = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let range = e.offset * 8..(e.offset + n) * 8;
        let raw = blob
            .get(range)
            .ok_or_else(|| bad(&format!("tensor {} runs past the end", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(NamedTensor::new(e.name, Tensor::new(e.shape, data)?));
    }
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}
