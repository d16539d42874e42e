//! Binary parameter dump.
//!
//! Layout: 8-byte magic `E2ECCKPT`, `u32` LE version, `u64` LE header length,
//! a UTF-8 JSON header, then every tensor's values as little-endian `f64`,
//! concatenated in header order. The header lists `{name, shape, offset}`
//! per tensor (offset counted in values), the model config, and free-form
//! metadata.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"E2ECCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    endianness: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

fn ck(e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

pub fn write_checkpoint(mut w: impl Write, params: &ModelParams, meta: &serde_json::Value) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.named() {
        tensors.push(TensorEntry { name, shape: t.shape.clone(), offset });
        offset += t.len();
    }
    let header = Header {
        format: "e2ec-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        endianness: "little".into(),
        config: params.config.clone(),
        tensors,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(ck)?;
    w.write_all(CHECKPOINT_MAGIC).map_err(ck)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(ck)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(ck)?;
    w.write_all(&json).map_err(ck)?;
    let mut buf = Vec::with_capacity(offset * 8);
    for (_, t) in params.named() {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(ck)
}

/// Returns the parameters and the stored metadata.
pub fn read_checkpoint(mut r: impl Read) -> Result<(ModelParams, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(ck)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ck("bad magic"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(ck)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(ck)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    if hlen > 1 << 30 {
        return Err(ck("header too large"));
    }
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(ck)?;
    let header: Header = serde_json::from_slice(&hbuf).map_err(ck)?;
    if header.dtype != "f64" || header.endianness != "little" {
        return Err(ck(format!("unsupported dtype {} / {}", header.dtype, header.endianness)));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(ck)?;
    if data.len() % 8 != 0 {
        return Err(ck("truncated tensor data"));
    }
    let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let mut params = ModelParams::new(header.config)?;
    let slots = params.named_mut();
    if slots.len() != header.tensors.len() {
        return Err(ck(format!("expected {} tensors, found {}", slots.len(), header.tensors.len())));
    }
    for ((name, t), e) in slots.into_iter().zip(&header.tensors) {
        if name != e.name || t.shape != e.shape {
            return Err(ck(format!("tensor {} {:?} does not match expected {name} {:?}", e.name, e.shape, t.shape)));
        }
        let src = values
            .get(e.offset..e.offset + t.len())
            .ok_or_else(|| ck(format!("tensor {name} out of range")))?;
        t.data.copy_from_slice(src);
    }
    Ok((params, header.meta))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &serde_json::Value) -> Result<()> {
    let f = std::fs::File::create(path).map_err(ck)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, params, meta)?;
    w.flush().map_err(ck)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, serde_json::Value)> {
    let f = std::fs::File::open(path).map_err(ck)?;
    read_checkpoint(std::io::BufReader::new(f))
}
