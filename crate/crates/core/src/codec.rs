//! Flat binary encoding for named tensor sets, shared by checkpoints and channel payloads.
//!
//! Layout, all integers little-endian:
//! ```text
//! magic    8 bytes  "FFAPCKPT"
//! version  u32      1
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   kind     u8     0 = parameter, 1 = buffer
//!   ndim     u32, then ndim × u64 extents
//!   data     product(extents) × f64
//! ```

use crate::error::{Error, Result};
use crate::nn::{NamedTensor, TensorKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FFAPCKPT";
pub const VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(match t.kind {
            TensorKind::Param => 0,
            TensorKind::Buffer => 1,
        });
        out.extend_from_slice(&(t.tensor.shape().len() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Byte cursor that reports truncation as a schema error.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Schema(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Schema(format!("invalid UTF-8 name: {e}")))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader::new(bytes);
    let out = read_tensors(&mut r)?;
    if !r.finished() {
        return Err(Error::Schema(format!("{} trailing bytes", bytes.len() - r.position())));
    }
    Ok(out)
}

pub(crate) fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<NamedTensor>> {
    if r.take(8)? != MAGIC {
        return Err(Error::Schema("bad magic, not a tensor file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Schema(format!("unsupported tensor format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string()?;
        let kind = match r.u8()? {
            0 => TensorKind::Param,
            1 => TensorKind::Buffer,
            k => return Err(Error::Schema(format!("tensor `{name}` has unknown kind {k}"))),
        };
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Schema(format!("tensor `{name}` extents overflow")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Schema("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push(NamedTensor::new(name, kind, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &std::path::Path, tensors: &[NamedTensor]) -> Result<()> {
    std::fs::write(path, encode_tensors(tensors))?;
    Ok(())
}

pub fn read_checkpoint(path: &std::path::Path) -> Result<Vec<NamedTensor>> {
    decode_tensors(&std::fs::read(path)?)
}
