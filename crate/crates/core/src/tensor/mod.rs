//! Dense row-major tensors and the primitive numerical operations the rest of
//! the crate is built from.
//!
//! Activations are always laid out as `(batch, channels, height, width)`.
//! Every operation here is a pure function of its arguments: tensors are
//! never mutated in place by an op, and nothing here holds shared state.

mod io;
mod ops;

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use io::{read_ptns, read_ptns_any, write_ptns, AnyTensor};
pub use ops::*;

use crate::error::{Error, Result};

/// Element type tag, as stored in the PTNS header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    U32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::U32 => "u32",
        })
    }
}

/// A storable tensor element.
pub trait Element: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes` has exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Element for u32 {
    const DTYPE: DType = DType::U32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        u32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

/// Floating point element usable in numeric ops. `f32` is the training
/// precision, `f64` is used for gradient verification.
pub trait Real:
    Element
    + num_traits::Float
    + std::iter::Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + fmt::Display
{
    fn lit(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Dense N-dimensional array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let mut s = f.debug_struct("Tensor");
        s.field("dims", &self.dims);
        if self.data.len() <= SHOWN {
            s.field("data", &self.data);
        } else {
            s.field("data", &format_args!("{:?}.. ({} elements)", &self.data[..SHOWN], self.data.len()));
        }
        s.finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor, checking that every dimension is positive and that
    /// `data` holds exactly `product(dims)` elements.
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("dimension {axis} of {dims:?} is zero")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Self {
        let dims = dims.into();
        assert!(dims.iter().all(|&d| d > 0), "zero-sized dims {dims:?}");
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; n],
        }
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, T::default())
    }

    /// Fills a tensor by evaluating `f` at every flat index.
    pub fn from_fn(dims: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let dims = dims.into();
        assert!(dims.iter().all(|&d| d > 0), "zero-sized dims {dims:?}");
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the buffer. The dims stay fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }

    /// Flat offset of a multi-index, or `None` if it is out of bounds.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dims.len() {
            return None;
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.dims).zip(self.strides()) {
            if i >= d {
                return None;
            }
            off += i * s;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.offset(index).map(|o| self.data[o])
    }

    /// Same data, new dims with the same element count.
    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(dims, self.data.clone())
    }

    pub fn into_reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Unpacks `(batch, channels, height, width)`, failing on any other rank.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.dims.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected rank-4 (batch, channels, height, width) tensor, got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::lit(v.to_f64_lossy()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
