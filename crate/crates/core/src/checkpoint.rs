//! Model checkpoint container: a kind tag, string metadata and named tensor
//! sections, little-endian with a trailing CRC32.

use std::path::Path;

use crate::binio::{FormatError, Reader, Writer};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"INOM";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str, FormatError> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| FormatError::Malformed(format!("missing metadata key `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| FormatError::Malformed(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, FormatError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| FormatError::Malformed(format!("missing tensor `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), FormatError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!("checkpoint holds `{}`, expected `{kind}`", self.kind)))
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.str(&self.kind);
        w.u32(self.meta.len() as u32);
        for (k, v) in &self.meta {
            w.str(k);
            w.str(v);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.rank() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.u64(t.len() as u64);
            w.f64s(t.data());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(bytes, MAGIC)?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let kind = r.str()?;
        let n_meta = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((r.str()?, r.str()?));
        }
        let n_tensors = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = r.u64()? as usize;
            if shape.iter().product::<usize>() != len {
                return Err(FormatError::Malformed(format!(
                    "tensor `{name}` declares {len} values for shape {shape:?}"
                )));
            }
            let data = r.f64s(len)?;
            let t = Tensor::new(&shape, data).map_err(|e| FormatError::Malformed(e.to_string()))?;
            tensors.push((name, t));
        }
        r.end()?;
        Ok(Self { kind, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.encode())
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let bytes = std::fs::read(path)?;
        Ok(Self::decode(&bytes)?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
}
