//! Binary weights file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     b"MXVW"
//! version   u16 (currently 1)
//! count     u32
//! manifest  count x { path_len u32, path utf-8, dtype u8, rank u8, extents u64 x rank }
//! data      every tensor's scalars, little-endian, in manifest order
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64. Buffers (BatchNorm statistics) are
//! stored alongside trainable weights.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"MXVW";
pub const VERSION: u16 = 1;

/// Every named tensor of a model, in visit order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelWeights<T: Scalar = f32> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn from_module<M: Params<T>>(module: &M) -> Self {
        let mut entries = IndexMap::new();
        module.visit("", &mut |path, _, t| {
            entries.insert(path.to_string(), t.clone());
        });
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Copies every tensor into `module`. Fails on the first path that is
    /// missing, has another shape, or exists only in the file.
    pub fn apply_to<M: Params<T>>(&self, module: &mut M) -> Result<()> {
        let mut first_err = None;
        let mut used = 0;
        module.visit_mut("", &mut |path, _, t| {
            if first_err.is_some() {
                return;
            }
            match self.entries.get(path) {
                None => first_err = Some((path.to_string(), "missing from the weights file".to_string())),
                Some(w) if w.shape() != t.shape() => {
                    first_err = Some((
                        path.to_string(),
                        format!("shape {:?} in file, {:?} in model", w.shape(), t.shape()),
                    ))
                }
                Some(w) => {
                    *t = w.clone();
                    used += 1;
                }
            }
        });
        if first_err.is_none() && used != self.entries.len() {
            let mut paths = std::collections::HashSet::new();
            module.visit("", &mut |p, _, _| {
                paths.insert(p.to_string());
            });
            let extra = self
                .entries
                .keys()
                .find(|k| !paths.contains(k.as_str()))
                .cloned()
                .unwrap_or_default();
            first_err = Some((extra, "not present in the model".to_string()));
        }
        match first_err {
            Some((path, msg)) => Err(Error::WeightsMismatch { path, msg }),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (path, t) in &self.entries {
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.push(T::DTYPE.tag());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in self.entries.values() {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic bytes, not a weights file".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32::from_le_bytes(r.array()?) as usize;
            let path = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor path is not utf-8".into()))?
                .to_string();
            let [tag, rank] = r.array()?;
            let dtype =
                DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag} at `{path}`")))?;
            if dtype != T::DTYPE {
                return Err(Error::Format(format!(
                    "`{path}` is stored as {dtype}, expected {}",
                    T::DTYPE
                )));
            }
            let shape = (0..rank)
                .map(|_| r.array().map(|b| u64::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>>>()?;
            manifest.push((path, shape));
        }
        let width = T::DTYPE.size_bytes();
        let mut entries = IndexMap::with_capacity(manifest.len());
        for (path, shape) in manifest {
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(width)
                    .ok_or_else(|| Error::Format("tensor too large".into()))?,
            )?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?;
            if entries.insert(path.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate path `{path}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
}

pub fn save_weights<T: Scalar, M: Params<T>>(module: &M, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ModelWeights::from_module(module).to_bytes())?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelWeights<T>> {
    ModelWeights::from_bytes(&std::fs::read(path)?)
}
