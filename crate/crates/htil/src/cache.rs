//! Binary feature cache.
//!
//! ```text
//! magic   b"HTIL"
//! version u32 LE
//! rank    u32 LE
//! dims    rank x u32 LE
//! payload f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use htil_core::Tensor;
use sha2::{Digest, Sha256};

use crate::audio::MelSpec;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HTIL";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |message: String| Error::Cache {
        path: path.to_path_buf(),
        message,
    };
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| fail("truncated header".into()))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(fail("bad magic".into()));
    }
    let version = word(4)?;
    if version != VERSION {
        return Err(fail(format!("version {version}, expected {VERSION}")));
    }
    let rank = word(8)? as usize;
    let shape = (0..rank).map(|i| word(12 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let start = 12 + 4 * rank;
    let count: usize = shape.iter().product();
    if bytes.len() != start + 4 * count {
        return Err(fail(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            bytes.len().saturating_sub(start),
            4 * count
        )));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &encode(t))
}

/// Writes already encoded bytes, creating the parent directory.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Directory name for features computed with `mel` over clips of `clip_seconds`.
pub fn spec_key(mel: &MelSpec, clip_seconds: f64) -> String {
    let text = serde_json::to_string(&(mel, clip_seconds, VERSION)).expect("mel spec serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}
