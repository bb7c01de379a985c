//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `SGNT` |
//! | 4     | format version (u32, currently 1) |
//! | 1     | scalar width in bytes: 4 (`f32`) or 8 (`f64`) |
//! | 4     | depth (u32) |
//! | 4     | base channels (u32) |
//! | 4     | input channels (u32) |
//! | 8     | parameter count (u64) |
//! | n*w   | parameters in [`NetworkParams::values`] order |
//! | 32    | SHA-256 of every preceding byte |

use std::path::Path;

use sha2::{Digest, Sha256};

use super::net::{Architecture, NetworkParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SGNT";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 1 + 4 + 4 + 4 + 8;

pub fn encode<T: Scalar>(p: &NetworkParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + p.values.len() * T::BYTES + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    for v in [p.arch.depth, p.arch.base, p.arch.in_channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(p.values.len() as u64).to_le_bytes());
    for v in &p.values {
        v.write_le(&mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Decode into any scalar type, converting from the stored width.
pub fn decode<T: Scalar>(bytes: &[u8], origin: &str) -> Result<NetworkParams<T>> {
    let corrupt = |reason: String| Error::Corrupt {
        path: origin.into(),
        reason,
    };
    if bytes.len() < HEADER + 32 || &bytes[..4] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic or truncated)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("content hash mismatch".into()));
    }
    let version = u32_at(body, 4);
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let width = body[8] as usize;
    let arch = Architecture {
        depth: u32_at(body, 9) as usize,
        base: u32_at(body, 13) as usize,
        in_channels: u32_at(body, 17) as usize,
    };
    let count = u64::from_le_bytes(body[21..29].try_into().expect("8 bytes")) as usize;
    if body.len() != HEADER + count * width {
        return Err(corrupt("parameter block has the wrong length".into()));
    }
    let data = &body[HEADER..];
    let values: Vec<T> = match width {
        4 => data.chunks_exact(4).map(|c| T::of(f32::read_le(c).f64())).collect(),
        8 => data.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        w => return Err(corrupt(format!("unsupported scalar width {w}"))),
    };
    NetworkParams::from_values(arch, values).map_err(|e| corrupt(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(p: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkParams<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}
