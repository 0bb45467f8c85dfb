//! `NNCK` parameter checkpoints.
//!
//! Layout (little-endian): magic `NNCK`, `u16` version, `u32` entry count,
//! then per entry a `u32`-length-prefixed UTF-8 name, `u32` rank, `rank`
//! `u32` dims and the `f64` payload.

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNCK";
pub const NNCK_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_checkpoint(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&NNCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("NNCK", format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("NNCK", "bad magic"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != NNCK_VERSION {
        return Err(Error::format("NNCK", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("NNCK", "entry name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format("NNCK", format!("entry {name} has rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("NNCK", "dimension overflow"))?;
        let payload = r.take(len.checked_mul(8).ok_or_else(|| Error::format("NNCK", "size overflow"))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&dims, data).map_err(|e| Error::format("NNCK", e.to_string()))?;
        entries.push(CheckpointEntry { name, tensor });
    }
    if r.pos != bytes.len() {
        return Err(Error::format("NNCK", "trailing bytes"));
    }
    Ok(entries)
}
