//! Binary weight checkpoints.
//!
//! ```text
//! "MGWT" | version u32 | count u32 | count × entry
//! entry: name_len u32 | name utf-8 | ndim u32 | ndim × u64 | len × f64
//! ```
//! All integers and floats little-endian, tensors row-major, entries in name
//! order. The layout is the same for every architecture.

use std::io::Read;
use std::path::Path;

use super::weights::WeightMap;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MGWT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_weights(w: &WeightMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + w.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(w.len() as u32).to_le_bytes());
    for (name, t) in w.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightMap> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a weight checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut w = WeightMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > r.buf.len()) {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let data = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if w.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        w.insert(name, Tensor::new(shape, data)?);
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(w)
}

pub fn save_weights(w: &WeightMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_weights(w))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightMap> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}
