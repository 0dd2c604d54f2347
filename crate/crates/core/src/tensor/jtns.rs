//! JTNS container: `"JTNS"`, version byte, dtype code (0 = f64, 1 = i64),
//! rank byte, little-endian `u64` extents, raw little-endian payload.
//!
//! A named archive is a little-endian `u32` entry count followed, per entry,
//! by a `u16` name length, the UTF-8 name, and one JTNS record.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"JTNS";
const VERSION: u8 = 1;

/// A tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    F64(Tensor),
    I64 { shape: Vec<usize>, data: Vec<i64> },
}

impl Stored {
    pub fn shape(&self) -> &[usize] {
        match self {
            Stored::F64(t) => t.shape(),
            Stored::I64 { shape, .. } => shape,
        }
    }

    pub fn into_f64(self) -> Result<Tensor> {
        match self {
            Stored::F64(t) => Ok(t),
            Stored::I64 { .. } => Err(fmt_err("expected an f64 tensor, found i64")),
        }
    }

    pub fn into_i64(self) -> Result<(Vec<usize>, Vec<i64>)> {
        match self {
            Stored::I64 { shape, data } => Ok((shape, data)),
            Stored::F64(_) => Err(fmt_err("expected an i64 tensor, found f64")),
        }
    }
}

impl From<Tensor> for Stored {
    fn from(t: Tensor) -> Self {
        Stored::F64(t)
    }
}

fn fmt_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "JTNS tensor",
        detail: detail.into(),
    }
}

fn io_err(e: std::io::Error) -> Error {
    fmt_err(e.to_string())
}

pub fn write_jtns<W: Write>(mut w: W, t: &Stored) -> Result<()> {
    let shape = t.shape();
    if shape.len() > u8::MAX as usize {
        return Err(fmt_err("rank exceeds 255"));
    }
    let dtype = match t {
        Stored::F64(_) => 0u8,
        Stored::I64 { .. } => 1u8,
    };
    let mut buf = Vec::with_capacity(8 + 8 * shape.len() + 8 * shape.iter().product::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[VERSION, dtype, shape.len() as u8]);
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        Stored::F64(t) => t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        Stored::I64 { data, .. } => data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_jtns<R: Read>(mut r: R) -> Result<Stored> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head).map_err(io_err)?;
    if &head[..4] != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    if head[4] != VERSION {
        return Err(fmt_err(format!("unsupported version {}", head[4])));
    }
    let dtype = head[5];
    let rank = head[6] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(io_err)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(fmt_err(format!("invalid extents {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * 8];
    r.read_exact(&mut payload).map_err(io_err)?;
    let words = payload.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
    match dtype {
        0 => Ok(Stored::F64(Tensor::new(shape, words.map(f64::from_le_bytes).collect())?)),
        1 => Ok(Stored::I64 {
            shape,
            data: words.map(i64::from_le_bytes).collect(),
        }),
        other => Err(fmt_err(format!("unknown dtype code {other}"))),
    }
}

pub fn write_archive<W: Write>(mut w: W, entries: &[(String, Stored)]) -> Result<()> {
    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(fmt_err("entry name too long"));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        write_jtns(&mut w, t)?;
    }
    Ok(())
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Vec<(String, Stored)>> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io_err)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(io_err)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| fmt_err(e.to_string()))?;
        out.push((name, read_jtns(&mut r)?));
    }
    Ok(out)
}
