//! Named-tensor container shared by checkpoints and object stores.
//!
//! ```text
//! "PTAT" | version u32 | count u32 | count × entry
//! entry: name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | f32 × Π dims
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PTAT";
pub const VERSION: u32 = 1;

/// Ordered list of named tensors; order is preserved through a round trip.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name).ok_or_else(|| Error::Format { what: "container", detail: format!("missing entry `{name}`") })
    }

    /// Stores integers bit-for-bit in f32 slots.
    pub fn push_u32s(&mut self, name: impl Into<String>, values: &[u32]) {
        let data = values.iter().map(|v| f32::from_bits(*v)).collect();
        self.push(name, Tensor::new([values.len()], data).expect("non-empty"));
    }

    pub fn u32s(&self, name: &str) -> Result<Vec<u32>> {
        Ok(self.require(name)?.data().iter().map(|v| v.to_bits()).collect())
    }

    pub fn push_u64(&mut self, name: impl Into<String>, v: u64) {
        self.push_u32s(name, &[v as u32, (v >> 32) as u32]);
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.u32s(name)?[..] {
            [lo, hi] => Ok(lo as u64 | (hi as u64) << 32),
            _ => Err(Error::Format { what: "container", detail: format!("`{name}` is not a u64") }),
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, v: f64) {
        self.push_u64(name, v.to_bits());
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(name)?))
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: &[u8]) {
        let words: Vec<u32> = bytes.iter().map(|b| *b as u32).collect();
        if words.is_empty() {
            self.push_u32s(name, &[u32::MAX]);
        } else {
            self.push_u32s(name, &words);
        }
    }

    pub fn bytes(&self, name: &str) -> Result<Vec<u8>> {
        let words = self.u32s(name)?;
        if words == [u32::MAX] {
            return Ok(Vec::new());
        }
        words
            .into_iter()
            .map(|w| u8::try_from(w).map_err(|_| Error::Format { what: "container", detail: format!("`{name}` is not a byte string") }))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format { what: "container", detail: "bad magic (expected PTAT)".into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format { what: "container", detail: format!("unsupported version {version}") });
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format { what: "container", detail: "entry name is not UTF-8".into() })?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| Error::Format {
                what: "container",
                detail: format!("entry `{name}` is too large"),
            })?;
            let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Format { what: "container", detail: format!("entry `{name}`: {e}") })?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { what: "container", detail: "trailing bytes".into() });
        }
        Ok(Container { entries })
    }

    /// Writes via a temporary file and rename, so readers never observe a
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Format {
            what: "container",
            detail: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
