//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `LRFRCKPT`, `u32` format version, then
//! records until end of file. Each record is `u32` name length, UTF-8 name,
//! `u8` dtype tag (0 = f32, 1 = f64), `u32` rank, `rank × u64` extents and the
//! row-major payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{DType, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"LRFRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayRecord {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayRecord {
    pub fn dtype(&self) -> DType {
        match self.data {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let data = match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| T::cast_from(x as f64)).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| T::cast_from(x)).collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => ArrayData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => ArrayData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            shape: t.shape().to_vec(),
            data,
        }
    }
}

/// Ordered collection of named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    records: Vec<(String, ArrayRecord)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        self.insert_record(name, ArrayRecord::from_tensor(t));
    }

    pub fn insert_record(&mut self, name: &str, rec: ArrayRecord) {
        match self.records.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = rec,
            None => self.records.push((name.to_string(), rec)),
        }
    }

    pub fn insert_scalars(&mut self, name: &str, values: &[f64]) {
        self.insert_record(
            name,
            ArrayRecord {
                shape: vec![values.len()],
                data: ArrayData::F64(values.to_vec()),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&ArrayRecord> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?
            .to_tensor()
    }

    pub fn scalars(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.tensor::<f64>(name)?.into_data())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for (name, rec) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match rec.dtype() {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.extend_from_slice(&(rec.shape.len() as u32).to_le_bytes());
            for &e in &rec.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            match &rec.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut ck = Checkpoint::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = match tag {
                0 => ArrayData::F32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => ArrayData::F64(
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                t => return Err(Error::Checkpoint(format!("unknown dtype tag {t} for `{name}`"))),
            };
            ck.records.push((name, ArrayRecord { shape, data }));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::path(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::path(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
