//! Binary tensor encoding shared by checkpoints.
//!
//! Layout (all integers little-endian `u64`):
//!
//! ```text
//! dtype code (0 = f32, 1 = f64) | rank | extent[0] .. extent[rank-1] | raw values
//! ```
//!
//! Raw values are little-endian IEEE-754 in the tensor's dtype.

use std::io::{self, Write};

use super::{DType, Tensor};
use crate::error::{Error, Result};

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> io::Result<()> {
    w.write_all(&t.dtype().code().to_le_bytes())?;
    w.write_all(&(t.rank() as u64).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    match t.dtype() {
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Cursor over an in-memory byte buffer that reports the offset of every
/// decoding failure.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.remaining()
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    pub fn fail(&self, at: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            detail: detail.into(),
        }
    }
}

pub fn read_tensor(r: &mut ByteReader<'_>) -> Result<Tensor> {
    let at = r.offset();
    let code = r.u64("dtype code")?;
    let dtype =
        DType::from_code(code).ok_or_else(|| r.fail(at, format!("unknown dtype code {code}")))?;
    let at = r.offset();
    let rank = r.u64("rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(r.fail(at, format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = r.offset();
        let e = r.u64("extent")?;
        if e == 0 || e > u32::MAX as u64 {
            return Err(r.fail(at, format!("invalid extent {e}")));
        }
        shape.push(e as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| r.fail(at, "tensor size overflows"))?;
    let width = dtype.size_in_bytes();
    let at = r.offset();
    let len = numel
        .checked_mul(width)
        .ok_or_else(|| r.fail(at, "tensor size overflows"))?;
    let raw = r.bytes(len, "tensor values")?;
    let data: Vec<f64> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(&shape, dtype, data).map_err(|e| r.fail(at, e.to_string()))
}
