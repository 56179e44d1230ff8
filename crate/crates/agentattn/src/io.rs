//! The `ATNS` tensor file format.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `ATNS`                  |
//! | 4      | 4         | `u32` version, currently 1    |
//! | 8      | 1         | dtype code (0 = f32, 1 = f64) |
//! | 9      | 1         | rank                          |
//! | 10     | 6         | reserved, zero                |
//! | 16     | 8 × rank  | `u64` dims                    |
//! | …      | len × size| row-major payload             |

use std::fs;
use std::path::Path;

use agentattn_core::{DType, Scalar, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ATNS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// A tensor whose element type is only known at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn dtype(&self) -> DType {
        match self {
            DynTensor::F32(_) => DType::F32,
            DynTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
        }
    }

    /// The tensor as `T`, or a type error if the stored dtype differs.
    pub fn into_typed<T: Scalar>(self) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(agentattn_core::Error::Type {
                expected: T::DTYPE.name(),
                found: self.dtype().name(),
            }
            .into());
        }
        // same element type, so the cast is the identity
        Ok(match self {
            DynTensor::F32(t) => t.cast(),
            DynTensor::F64(t) => t.cast(),
        })
    }
}

impl From<Tensor<f32>> for DynTensor {
    fn from(t: Tensor<f32>) -> Self {
        DynTensor::F32(t)
    }
}

impl From<Tensor<f64>> for DynTensor {
    fn from(t: Tensor<f64>) -> Self {
        DynTensor::F64(t)
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.rank() + t.len() * T::DTYPE.size_of());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0u8; 6]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.to_le_bytes_vec(&mut out);
    }
    out
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn payload<T: Scalar>(shape: Vec<usize>, bytes: &[u8]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size_of();
    let data = bytes.chunks_exact(size).map(T::from_le_slice).collect::<Vec<_>>();
    Ok(Tensor::new(shape, data)?)
}

pub fn decode(bytes: &[u8]) -> Result<DynTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| format_err(format!("unknown dtype code {}", bytes[8])))?;
    let rank = bytes[9] as usize;
    if rank == 0 {
        return Err(format_err("rank 0"));
    }
    if bytes[10..16].iter().any(|&b| b != 0) {
        return Err(format_err("reserved header bytes are not zero"));
    }
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(format_err("truncated dimension table"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len: usize = 1;
    for chunk in bytes[HEADER_LEN..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| format_err(format!("dimension {d} overflows")))?;
        if d == 0 {
            return Err(format_err("zero-sized dimension"));
        }
        len = len.checked_mul(d).ok_or_else(|| format_err("element count overflows"))?;
        shape.push(d);
    }
    let expected = len
        .checked_mul(dtype.size_of())
        .ok_or_else(|| format_err("payload size overflows"))?;
    let body = &bytes[dims_end..];
    if body.len() != expected {
        return Err(format_err(format!("payload has {} bytes, shape {shape:?} needs {expected}", body.len())));
    }
    Ok(match dtype {
        DType::F32 => DynTensor::F32(payload(shape, body)?),
        DType::F64 => DynTensor::F64(payload(shape, body)?),
    })
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DynTensor> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_tensor_as<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_tensor(path)?.into_typed()
}
