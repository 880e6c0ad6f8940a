//! Binary tensor container.
//!
//! Layout: an 8-byte little-endian `u64` header length, a UTF-8 JSON header of that
//! length, then the raw little-endian value blob. The header lists every tensor by
//! name with its dtype, shape and byte offset into the blob, plus free-form metadata.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

const BYTE_ORDER: &str = "little";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    byte_order: String,
    tensors: Vec<Entry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A tensor in either precision, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts into the requested precision.
    pub fn to<T: Real>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

/// Named tensors plus JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tensors: Vec<(String, AnyTensor)>,
    pub metadata: serde_json::Value,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single<T: Real>(name: &str, t: &Tensor<T>) -> Self {
        let mut c = Self::new();
        c.push(name, t);
        c
    }

    /// Stores the tensor in its own precision.
    pub fn push<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        let any = match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        };
        self.tensors.push((name.to_string(), any));
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .map(|t| t.to::<T>())
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = blob.len();
            let dtype = match t {
                AnyTensor::F32(t) => {
                    t.data().iter().for_each(|v| v.write_le(&mut blob));
                    DType::F32
                }
                AnyTensor::F64(t) => {
                    t.data().iter().for_each(|v| v.write_le(&mut blob));
                    DType::F64
                }
            };
            entries.push(Entry {
                name: name.clone(),
                dtype,
                shape: t.shape().to_vec(),
                offset,
            });
        }
        let header = Header {
            byte_order: BYTE_ORDER.to_string(),
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + blob.len());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("truncated header length".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8usize.saturating_add(hlen))
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.byte_order != BYTE_ORDER {
            return Err(Error::Format(format!(
                "unsupported byte order {:?}",
                header.byte_order
            )));
        }
        let blob = &bytes[8 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let width = e.dtype.size();
            let raw = blob
                .get(e.offset..e.offset + n * width)
                .ok_or_else(|| Error::Format(format!("tensor {:?} overruns blob", e.name)))?;
            let t = match e.dtype {
                DType::F32 => AnyTensor::F32(Tensor::from_vec(
                    &e.shape,
                    raw.chunks_exact(4).map(f32::read_le).collect(),
                )?),
                DType::F64 => AnyTensor::F64(Tensor::from_vec(
                    &e.shape,
                    raw.chunks_exact(8).map(f64::read_le).collect(),
                )?),
            };
            tensors.push((e.name, t));
        }
        Ok(Container {
            tensors,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::from(e).with_path(path))?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::from(e).with_path(path))?;
        Self::from_bytes(&bytes)
    }
}
