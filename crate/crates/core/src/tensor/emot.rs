//! EMOT binary tensor files.
//!
//! Layout: `"EMOT"`, version byte (1), dtype byte (0 = f32, 1 = f64, 2 = u8),
//! little-endian `u32` rank, `rank` little-endian `u64` dims, then the
//! row-major little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMOT";
const VERSION: u8 = 1;

/// A tensor of any EMOT element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8(t) => t.shape(),
        }
    }

    /// Extracts a float tensor of the requested precision, if the dtype matches.
    pub fn into_scalar<T: Scalar>(self) -> Option<Tensor<T>> {
        let boxed: Box<dyn std::any::Any> = match self {
            AnyTensor::F32(t) => Box::new(t),
            AnyTensor::F64(t) => Box::new(t),
            AnyTensor::U8(_) => return None,
        };
        boxed.downcast::<Tensor<T>>().ok().map(|b| *b)
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(10 + 8 * shape.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype().code());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            AnyTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            AnyTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            AnyTensor::U8(t) => out.extend_from_slice(t.data()),
        }
        out
    }
}

impl<T: Scalar> From<Tensor<T>> for AnyTensor {
    fn from(t: Tensor<T>) -> Self {
        let boxed: Box<dyn std::any::Any> = Box::new(t);
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(*boxed.downcast().expect("dtype f32")),
            DType::F64 => AnyTensor::F64(*boxed.downcast().expect("dtype f64")),
            DType::U8 => unreachable!("u8 is not a float scalar"),
        }
    }
}

impl From<Tensor<u8>> for AnyTensor {
    fn from(t: Tensor<u8>) -> Self {
        AnyTensor::U8(t)
    }
}

pub fn write_emot_to(w: &mut impl Write, t: &AnyTensor) -> std::io::Result<()> {
    w.write_all(&t.encode())
}

/// Reads one EMOT record from a stream. `origin` labels errors.
pub fn read_emot_from(r: &mut impl Read, origin: &Path) -> Result<AnyTensor> {
    let io = |e| Error::io(origin, e);
    let mut head = [0u8; 10];
    r.read_exact(&mut head).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(origin, "truncated EMOT header")
        } else {
            io(e)
        }
    })?;
    if &head[..4] != MAGIC {
        return Err(Error::format(origin, "bad EMOT magic"));
    }
    if head[4] != VERSION {
        return Err(Error::format(origin, format!("unsupported EMOT version {}", head[4])));
    }
    let dtype = DType::from_code(head[5])
        .ok_or_else(|| Error::format(origin, format!("unknown dtype code {}", head[5])))?;
    let rank = u32::from_le_bytes(head[6..10].try_into().expect("4 bytes")) as usize;
    if rank > 16 {
        return Err(Error::format(origin, format!("implausible rank {rank}")));
    }
    let mut dims = vec![0u8; rank * 8];
    r.read_exact(&mut dims)
        .map_err(|_| Error::format(origin, "truncated EMOT dims"))?;
    let shape: Vec<usize> = dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(origin, "EMOT shape overflows"))?;
    let mut payload = vec![0u8; n * dtype.size()];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(origin, "truncated EMOT payload"))?;
    let t = match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(shape, payload.chunks_exact(4).map(f32::read_le).collect())?),
        DType::F64 => AnyTensor::F64(Tensor::new(shape, payload.chunks_exact(8).map(f64::read_le).collect())?),
        DType::U8 => AnyTensor::U8(Tensor::new(shape, payload)?),
    };
    Ok(t)
}

pub fn write_emot(path: impl AsRef<Path>, t: &AnyTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, t.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_emot(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = &bytes[..];
    let t = read_emot_from(&mut cursor, path)?;
    if !cursor.is_empty() {
        return Err(Error::format(path, "trailing bytes after EMOT payload"));
    }
    Ok(t)
}
