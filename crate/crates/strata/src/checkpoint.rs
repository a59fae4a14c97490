//! Parameter checkpoints: an 8-byte magic, a little-endian u64 header length,
//! a JSON header, then every tensor as little-endian f32 in visiting order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use strata_core::encoder::{Encoder, EncoderConfig};
use strata_core::nn::Module;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 8] = b"STRATACK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub tensors: Vec<TensorInfo>,
    /// Model-specific settings needed to rebuild the module.
    pub meta: serde_json::Value,
}

pub fn encode<M: Module + ?Sized>(module: &M, meta: serde_json::Value) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    module.visit(&mut |p| {
        tensors.push(TensorInfo {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        });
        data.extend(fsutil::f32_le_bytes(p.value.data().iter().copied()));
    });
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        tensors,
        meta,
    };
    let h = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + h.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&data);
    out
}

pub fn read_header(path: &Path, bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a strata checkpoint"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(n).filter(|e| *e <= bytes.len()).ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {}", header.format_version)));
    }
    Ok((header, end))
}

/// Loads parameters into `module`, which must have the same names and shapes
/// in the same order.
pub fn decode_into<M: Module + ?Sized>(path: &Path, bytes: &[u8], module: &mut M) -> Result<serde_json::Value> {
    let (header, start) = read_header(path, bytes)?;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let values = fsutil::f32_le_values(path, &bytes[start..], total)?;
    let mut err = None;
    let mut i = 0;
    let mut off = 0;
    module.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match header.tensors.get(i) {
            Some(t) if t.name == p.name && t.shape == p.value.shape() => {
                let n = p.value.len();
                p.value.data_mut().copy_from_slice(&values[off..off + n]);
                off += n;
            }
            Some(t) => err = Some(format!("tensor {i} is {} {:?}, model expects {} {:?}", t.name, t.shape, p.name, p.value.shape())),
            None => err = Some(format!("checkpoint lacks tensor {}", p.name)),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(Error::format(path, e));
    }
    if i != header.tensors.len() {
        return Err(Error::format(path, format!("checkpoint has {} tensors, model has {i}", header.tensors.len())));
    }
    Ok(header.meta)
}

/// Saves the encoder alone; the pretraining decoder is not kept.
pub fn save_encoder(path: &Path, encoder: &Encoder) -> Result<()> {
    let meta = serde_json::to_value(encoder.config()).expect("config serializes");
    fsutil::write_atomic(path, &encode(encoder, meta))
}

pub fn load_encoder(path: &Path) -> Result<Encoder> {
    fsutil::require(path, "pretrain-encoder")?;
    let bytes = fsutil::read(path)?;
    let (header, _) = read_header(path, &bytes)?;
    let config: EncoderConfig =
        serde_json::from_value(header.meta).map_err(|e| Error::format(path, format!("bad encoder config: {e}")))?;
    let mut enc = Encoder::new(config)?;
    decode_into(path, &bytes, &mut enc)?;
    Ok(enc)
}
