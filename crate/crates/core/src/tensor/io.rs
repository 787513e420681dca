//! PTNS tensor files.
//!
//! Layout: magic `PTNS`, `u8` version (1), `u8` dtype code (0 = f32, 1 = f64,
//! 2 = u32), `u8` ndim, `ndim` little-endian `u32` dims, then the raw
//! little-endian element data.

use std::path::Path;

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

pub const PTNS_MAGIC: &[u8; 4] = b"PTNS";
pub const PTNS_VERSION: u8 = 1;

/// A decoded tensor of any supported element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U32(Tensor<u32>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U32(_) => DType::U32,
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
            AnyTensor::U32(t) => t.dims(),
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        match self {
            AnyTensor::F32(t) => t.encode_ptns(out),
            AnyTensor::F64(t) => t.encode_ptns(out),
            AnyTensor::U32(t) => t.encode_ptns(out),
        }
    }

    /// Decodes one tensor starting at `bytes[0]`; `base` is the absolute
    /// offset of `bytes` within its file, used in error messages. Returns the
    /// tensor and the number of bytes consumed.
    pub fn decode(bytes: &[u8], base: usize) -> Result<(AnyTensor, usize)> {
        let header = Header::parse(bytes, base)?;
        let t = match header.dtype {
            DType::F32 => AnyTensor::F32(header.read_body(bytes, base)?),
            DType::F64 => AnyTensor::F64(header.read_body(bytes, base)?),
            DType::U32 => AnyTensor::U32(header.read_body(bytes, base)?),
        };
        Ok((t, header.total_len()))
    }

    pub fn into_typed<T: Element>(self) -> Option<Tensor<T>> {
        let any: Box<dyn std::any::Any> = match self {
            AnyTensor::F32(t) => Box::new(t),
            AnyTensor::F64(t) => Box::new(t),
            AnyTensor::U32(t) => Box::new(t),
        };
        any.downcast::<Tensor<T>>().ok().map(|b| *b)
    }
}

struct Header {
    dtype: DType,
    dims: Vec<usize>,
    header_len: usize,
}

impl Header {
    fn parse(bytes: &[u8], base: usize) -> Result<Header> {
        if bytes.len() < 7 {
            return Err(Error::format(base, "truncated PTNS header"));
        }
        if &bytes[..4] != PTNS_MAGIC {
            return Err(Error::format(base, "bad magic, expected PTNS"));
        }
        if bytes[4] != PTNS_VERSION {
            return Err(Error::format(base + 4, format!("unsupported PTNS version {}", bytes[4])));
        }
        let dtype = DType::from_code(bytes[5])
            .ok_or_else(|| Error::format(base + 5, format!("unknown dtype code {}", bytes[5])))?;
        let ndim = bytes[6] as usize;
        let header_len = 7 + 4 * ndim;
        if bytes.len() < header_len {
            return Err(Error::format(base + bytes.len(), "truncated PTNS dims"));
        }
        let mut dims = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let at = 7 + 4 * i;
            let d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
            if d == 0 {
                return Err(Error::format(base + at, format!("dimension {i} is zero")));
            }
            dims.push(d);
        }
        if ndim == 0 {
            return Err(Error::format(base + 6, "ndim is zero"));
        }
        Ok(Header {
            dtype,
            dims,
            header_len,
        })
    }

    fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    fn total_len(&self) -> usize {
        self.header_len + self.numel() * self.dtype.size()
    }

    fn read_body<T: Element>(&self, bytes: &[u8], base: usize) -> Result<Tensor<T>> {
        let size = self.dtype.size();
        let body = &bytes[self.header_len..];
        let need = self.numel() * size;
        if body.len() < need {
            return Err(Error::format(
                base + bytes.len(),
                format!("truncated PTNS data: need {need} bytes, have {}", body.len()),
            ));
        }
        let data = body[..need].chunks_exact(size).map(T::read_le).collect();
        Tensor::new(self.dims.clone(), data)
    }
}

impl<T: Element> Tensor<T> {
    /// Appends the PTNS encoding of this tensor to `out`.
    pub fn encode_ptns(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(PTNS_MAGIC);
        out.push(PTNS_VERSION);
        out.push(T::DTYPE.code());
        out.push(u8::try_from(self.rank()).expect("rank fits in u8"));
        for &d in self.dims() {
            out.extend_from_slice(&u32::try_from(d).expect("dim fits in u32").to_le_bytes());
        }
        out.reserve(self.len() * T::DTYPE.size());
        for &v in self.data() {
            v.write_le(out);
        }
    }

    pub fn to_ptns_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_ptns(&mut out);
        out
    }

    /// Decodes a whole buffer holding exactly one tensor of type `T`.
    pub fn from_ptns_bytes(bytes: &[u8]) -> Result<Self> {
        let header = Header::parse(bytes, 0)?;
        if header.dtype != T::DTYPE {
            return Err(Error::format(
                5,
                format!("expected dtype {}, file holds {}", T::DTYPE, header.dtype),
            ));
        }
        let t = header.read_body(bytes, 0)?;
        let used = header.total_len();
        if used != bytes.len() {
            return Err(Error::format(used, format!("{} trailing bytes", bytes.len() - used)));
        }
        Ok(t)
    }
}

pub fn write_ptns<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tensor.to_ptns_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_ptns<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_ptns_bytes(&bytes)
}

pub fn read_ptns_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = AnyTensor::decode(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::format(used, format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}
