//! `DRCNW1` weight files.
//!
//! Layout (little-endian, no padding): the 6-byte magic, a `u32` tensor
//! count, then per tensor a `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` `u32` dims, and the row-major `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetworkSpec;
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 6] = b"DRCNW1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            name: name.into(),
            dims,
            data: vec![0.0; len],
        }
    }
}

/// Named real tensors parameterizing a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBundle {
    pub tensors: Vec<NamedTensor>,
}

impl WeightBundle {
    /// All weights, biases and PReLU slopes zero.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            tensors: spec
                .tensor_shapes()
                .into_iter()
                .map(|(name, dims)| NamedTensor::zeros(name, dims))
                .collect(),
        }
    }

    /// Uniform `[-scale, scale)` weights and biases; PReLU slopes in `[0, 0.5)`.
    pub fn random(spec: &NetworkSpec, seed: u64, scale: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bundle = Self::zeros(spec);
        for t in &mut bundle.tensors {
            let prelu = t.name.ends_with(".prelu");
            for v in &mut t.data {
                *v = if prelu {
                    rng.gen_range(0.0..0.5)
                } else {
                    rng.gen_range(-scale..scale)
                };
            }
        }
        bundle
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Every expected tensor present with the expected shape and finite values.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        for (name, dims) in spec.tensor_shapes() {
            let t = self
                .get(&name)
                .ok_or_else(|| Error::WeightMismatch(format!("missing tensor `{name}`")))?;
            if t.dims != dims {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: dims,
                    found: t.dims.clone(),
                });
            }
            if t.data.len() != dims.iter().product::<usize>() {
                return Err(Error::WeightMismatch(format!("tensor `{name}` has wrong element count")));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::WeightMismatch(format!("tensor `{name}` has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(WEIGHT_MAGIC)?;
        w.write_u32::<LittleEndian>(to_u32(self.tensors.len())?)?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            w.write_u32::<LittleEndian>(to_u32(name.len())?)?;
            w.write_all(name)?;
            w.write_u32::<LittleEndian>(to_u32(t.dims.len())?)?;
            for &d in &t.dims {
                w.write_u32::<LittleEndian>(to_u32(d)?)?;
            }
            for &v in &t.data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != WEIGHT_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
        }
        let count = read_u32(&mut r, "tensor count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let len = read_u32(&mut r, "name length")? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name, "name")?;
            let name = String::from_utf8(name).map_err(|_| Error::Format(format!("tensor {i} name is not UTF-8")))?;
            let rank = read_u32(&mut r, "rank")? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(&mut r, "dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let mut data = vec![0f32; len];
            r.read_f32_into::<LittleEndian>(&mut data)
                .map_err(|_| Error::Format(format!("tensor `{name}` data truncated")))?;
            tensors.push(NamedTensor { name, dims, data });
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    /// Loads and checks against `spec`.
    pub fn load_for(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Self> {
        let bundle = Self::load(path)?;
        bundle.validate(spec)?;
        Ok(bundle)
    }
}

fn to_u32(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{x} does not fit in u32")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    r.read_u32::<LittleEndian>()
        .map_err(|_| Error::Format(format!("truncated while reading {what}")))
}
