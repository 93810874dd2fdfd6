//! Named-tensor container files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     4 bytes   "VLMW" (weights) | "VLME" (embeddings, images)
//! version   u32       1
//! count     u32
//! entry*    name_len u16, name (UTF-8), ndim u8, dims u32 × ndim,
//!           payload f32 × prod(dims), row-major
//! ```
//!
//! Tensors are stored as `f32`; a tensor whose values are already
//! `f32`-representable round-trips bitwise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContainerKind {
    Weights,
    Embeddings,
}

impl ContainerKind {
    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            ContainerKind::Weights => b"VLMW",
            ContainerKind::Embeddings => b"VLME",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorContainer {
    kind: ContainerKind,
    entries: Vec<(String, Tensor)>,
}

impl TensorContainer {
    pub fn new(kind: ContainerKind) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn kind(&self) -> ContainerKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Input(format!("entry name too long ({} bytes)", name.len())));
        }
        if tensor.shape().len() > u8::MAX as usize
            || tensor.shape().iter().any(|&d| d > u32::MAX as usize)
        {
            return Err(Error::Input(format!("entry '{name}' shape not representable")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Input(format!("duplicate container entry '{name}'")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fetches a required entry, checking its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Input(format!("container has no entry '{name}'")))?;
        if t.shape() != shape {
            return Err(Error::Shape {
                op: "container entry",
                left: t.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(t.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.kind.magic());
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        let kind = if magic == ContainerKind::Weights.magic() {
            ContainerKind::Weights
        } else if magic == ContainerKind::Embeddings.magic() {
            ContainerKind::Embeddings
        } else {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        };
        let version_at = r.pos;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: version_at,
                message: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("entry count")?;
        let mut container = TensorContainer::new(kind);
        for index in 0..count {
            let entry_at = r.pos;
            let what = format!("entry #{index}");
            let name_len = r.u16(&what)? as usize;
            let name_bytes = r.take(name_len, &what)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| Error::Format {
                    offset: entry_at + 2,
                    message: format!("{what} name is not UTF-8"),
                })?
                .to_string();
            let what = format!("entry '{name}'");
            let ndim = r.take(1, &what)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32(&what)? as usize);
            }
            if ndim == 0 || shape.iter().any(|&d| d == 0) {
                return Err(Error::Format {
                    offset: entry_at,
                    message: format!("{what} has invalid shape {shape:?}"),
                });
            }
            let n: usize = shape.iter().product();
            let payload = r.take(4 * n, &format!("{what} payload"))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let tensor = Tensor::new(shape, data)?;
            if container.get(&name).is_some() {
                return Err(Error::Format {
                    offset: entry_at,
                    message: format!("duplicate {what}"),
                });
            }
            container.entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(container)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Rounds every value to the nearest `f32`, the precision the container stores.
pub fn to_storage_precision(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}
