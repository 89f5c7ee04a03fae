//! VTNS tensor file format.
//!
//! Layout, all integers little-endian:
//!   bytes 0..4   magic `VTNS`
//!   byte  4      format version, currently 1
//!   byte  5      dtype code: 0 = f32, 1 = f64
//!   bytes 6..10  rank as u32
//!   then rank dims as u32 each
//!   then numel raw scalar values
//!
//! Readers reject bad magic, unknown versions and dtypes, and truncated
//! payloads, reporting the byte offset where parsing failed.

use super::{numel_of, Dtype, Element, Tensor};
use crate::error::{Error, Result};
use std::fs;
use std::io::Write as _;
use std::path::Path;

const MAGIC: [u8; 4] = *b"VTNS";
const VERSION: u8 = 1;

/// A tensor of either storage dtype, as found in a file.
#[derive(Debug, Clone, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            DynTensor::F32(_) => Dtype::F32,
            DynTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to f32 storage, narrowing if needed.
    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            DynTensor::F32(t) => t,
            DynTensor::F64(t) => t.cast(),
        }
    }

    /// Convert to f64 storage, widening if needed.
    pub fn into_f64(self) -> Tensor<f64> {
        match self {
            DynTensor::F32(t) => t.cast(),
            DynTensor::F64(t) => t,
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::TensorParse { offset: offset as u64, message: message.into() }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(parse_err(
                self.pos,
                format!(
                    "truncated file: {what} needs {n} bytes, {} remain of {} total",
                    self.buf.len() - self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a VTNS payload from memory.
pub fn parse_vtns(buf: &[u8]) -> Result<DynTensor> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(parse_err(0, format!("bad magic {:?}, expected {:?}", magic, MAGIC)));
    }
    let version_at = c.pos;
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(parse_err(version_at, format!("unsupported version {version}, expected {VERSION}")));
    }
    let dtype_at = c.pos;
    let dtype = match c.u8("dtype")? {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(parse_err(dtype_at, format!("unknown dtype code {other}"))),
    };
    let rank_at = c.pos;
    let rank = c.u32("rank")? as usize;
    // Dims alone would overflow any plausible buffer well before this cap.
    if rank > 64 {
        return Err(parse_err(rank_at, format!("rank {rank} exceeds limit 64")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(c.u32(&format!("dim {i}"))? as usize);
    }
    let numel = numel_of(&shape);
    let payload = numel
        .checked_mul(dtype.size_bytes())
        .ok_or_else(|| parse_err(c.pos, format!("element count for shape {shape:?} overflows")))?;
    let raw = c.take(payload, "tensor data")?;
    if c.pos != buf.len() {
        return Err(parse_err(c.pos, format!("{} trailing bytes after tensor data", buf.len() - c.pos)));
    }
    match dtype {
        Dtype::F32 => {
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(DynTensor::F32(Tensor::new(shape, data)?))
        }
        Dtype::F64 => {
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect();
            Ok(DynTensor::F64(Tensor::new(shape, data)?))
        }
    }
}

/// Serialize a tensor to VTNS bytes.
pub fn encode_vtns<E: Element>(t: &Tensor<E>) -> Vec<u8> {
    let dtype = E::DTYPE;
    let mut out = Vec::with_capacity(10 + 4 * t.rank() + t.numel() * dtype.size_bytes());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => {
            for &x in t.data() {
                out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &x in t.data() {
                out.extend_from_slice(&x.to_f64().to_le_bytes());
            }
        }
    }
    out
}

/// Write a tensor to a VTNS file.
pub fn write_vtns<E: Element>(path: &Path, t: &Tensor<E>) -> Result<()> {
    let bytes = encode_vtns(t);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a VTNS file with either storage dtype.
pub fn read_vtns(path: &Path) -> Result<DynTensor> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_vtns(&buf)
}

/// Read a VTNS file, converting to f32 storage.
pub fn read_vtns_f32(path: &Path) -> Result<Tensor<f32>> {
    Ok(read_vtns(path)?.into_f32())
}

/// Read a VTNS file, converting to f64 storage.
pub fn read_vtns_f64(path: &Path) -> Result<Tensor<f64>> {
    Ok(read_vtns(path)?.into_f64())
}
