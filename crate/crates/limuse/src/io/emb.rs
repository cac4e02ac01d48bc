//! Portable embedding container so externally extracted voiceprint or
//! face embeddings can be dropped in later.
//!
//! Layout, all little endian: magic `LMSE-EMB`, u32 version, u32 ndim,
//! u32 dims[ndim], f32 payload in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LMSE-EMB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_embedding(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expect: usize = dims.iter().product();
    if expect != data.len() {
        return Err(Error::Data(format!(
            "embedding dims {dims:?} imply {expect} values, got {}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_embedding(path: &Path) -> Result<Embedding> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_embedding(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_embedding(bytes: &[u8]) -> Result<Embedding> {
    if bytes.len() < 16 {
        return Err(Error::Data("truncated embedding file (no header)".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::Data("bad magic (not an LMSE-EMB file)".into()));
    }
    let u32_at =
        |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(8);
    if version != VERSION {
        return Err(Error::Data(format!("unsupported version {version}")));
    }
    let ndim = u32_at(12) as usize;
    if bytes.len() < 16 + 4 * ndim {
        return Err(Error::Data("truncated embedding file (dims)".into()));
    }
    let dims: Vec<usize> = (0..ndim).map(|i| u32_at(16 + 4 * i) as usize).collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[16 + 4 * ndim..];
    if payload.len() != 4 * count {
        return Err(Error::Data(format!(
            "dims {dims:?} imply {count} values but payload holds {}",
            payload.len() / 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Embedding { dims, data })
}
