//! Checkpoint container.
//!
//! Layout: magic `GNLF1` (5 bytes), header length (u32 little-endian), UTF-8
//! JSON header, zero padding to an 8-byte boundary, then the payload of raw
//! little-endian tensors. Manifest offsets are relative to the payload start.

use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GNLF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Bytes per scalar: 4 (f32) or 2 (f16).
    pub width: usize,
    pub offset: usize,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Model configuration echo; interpreted by the pipeline.
    pub config: serde_json::Value,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        match self {
            TensorData::F32(_) => 4,
            TensorData::F16(_) => 2,
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::F32(v) => v.clone(),
            TensorData::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

fn pad8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

/// Serializes a checkpoint to bytes.
pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    let mut offset = 0;
    for t in &ckpt.tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?} but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            width: t.data.width(),
            offset,
        });
        offset += numel * t.data.width();
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        meta: ckpt.meta.clone(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let payload_start = pad8(CHECKPOINT_MAGIC.len() + 4 + header_bytes.len());
    let mut out = Vec::with_capacity(payload_start + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.resize(payload_start, 0);
    for t in &ckpt.tensors {
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

/// Parses and validates a checkpoint. Nothing is returned unless every
/// manifest entry is well-formed and in bounds.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let err = |msg: String| Error::Checkpoint(msg);
    if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(err("bad magic: not a GNLF1 checkpoint".into()));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = 9usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[9..header_end])
        .map_err(|e| err(format!("malformed header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported checkpoint version {}", header.version)));
    }
    let payload = &bytes[pad8(header_end).min(bytes.len())..];
    let mut spans: Vec<(usize, usize, &str)> = Vec::new();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.width != 2 && e.width != 4 {
            return Err(err(format!("tensor {}: unsupported scalar width {}", e.name, e.width)));
        }
        let end = e
            .numel()
            .checked_mul(e.width)
            .and_then(|n| n.checked_add(e.offset))
            .ok_or_else(|| err(format!("tensor {}: size overflow", e.name)))?;
        if end > payload.len() {
            return Err(err(format!(
                "tensor {}: bytes {}..{end} out of bounds (payload is {} bytes; file truncated?)",
                e.name,
                e.offset,
                payload.len()
            )));
        }
        spans.push((e.offset, end, &e.name));
        let raw = &payload[e.offset..end];
        let data = if e.width == 4 {
            TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        } else {
            TensorData::F16(raw.chunks_exact(2).map(|c| f16::from_le_bytes(c.try_into().unwrap())).collect())
        };
        tensors.push(Tensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data,
        });
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(err(format!("tensors {} and {} overlap", w[0].2, w[1].2)));
        }
    }
    Ok(Checkpoint {
        config: header.config,
        meta: header.meta,
        tensors,
    })
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
