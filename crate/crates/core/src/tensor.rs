//! Dense `(batch, heads, seq, head_dim)` tensors in f32 or f64.

use std::fmt::Debug;
use std::ops::Range;

use num_traits::Float;

use crate::error::{AttnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Floating-point element type of an [`AttnTensor`].
pub trait Scalar: Float + Debug + Default + Send + Sync + std::iter::Sum + 'static {
    const PRECISION: Precision;
    /// Number of hex digits of one IEEE-754 word.
    const HEX_WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_bits_u64(self) -> u64;
    fn from_bits_u64(bits: u64) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;
    const HEX_WIDTH: usize = 8;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
    fn from_bits_u64(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;
    const HEX_WIDTH: usize = 16;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
    fn from_bits_u64(bits: u64) -> Self {
        f64::from_bits(bits)
    }
}

/// Shape `(batch, heads, seq, head_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub head_dim: usize,
}

impl Dims {
    pub fn new(batch: usize, heads: usize, seq: usize, head_dim: usize) -> Self {
        Dims {
            batch,
            heads,
            seq,
            head_dim,
        }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.batch, self.heads, self.seq, self.head_dim]
    }

    pub fn checked_len(&self) -> Result<usize> {
        self.batch
            .checked_mul(self.heads)
            .and_then(|x| x.checked_mul(self.seq))
            .and_then(|x| x.checked_mul(self.head_dim))
            .ok_or(AttnError::DimOverflow(self.as_array()))
    }

    /// Number of `(batch, head)` slabs.
    pub fn slabs(&self) -> usize {
        self.batch * self.heads
    }

    pub fn with_seq(&self, seq: usize) -> Self {
        Dims { seq, ..*self }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.heads, self.seq, self.head_dim
        )
    }
}

/// Row-major dense tensor. Each `(batch, head)` slab is a contiguous
/// `seq * head_dim` block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnTensor<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> AttnTensor<T> {
    /// Builds a tensor, rejecting wrong lengths and non-finite values.
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        let len = dims.checked_len()?;
        if data.len() != len {
            return Err(AttnError::Shape(format!(
                "dims {dims} need {len} elements, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(AttnError::NonFinite { index });
        }
        Ok(AttnTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        let len = dims.checked_len()?;
        Ok(AttnTensor {
            dims,
            data: vec![T::zero(); len],
        })
    }

    /// Internal constructor for kernel outputs whose length is known to match.
    pub(crate) fn from_raw(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(
            data.len(),
            dims.batch * dims.heads * dims.seq * dims.head_dim
        );
        AttnTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn slab(&self, slab: usize) -> &[T] {
        let n = self.dims.seq * self.dims.head_dim;
        &self.data[slab * n..(slab + 1) * n]
    }

    pub fn row(&self, slab: usize, pos: usize) -> &[T] {
        let d = self.dims.head_dim;
        &self.slab(slab)[pos * d..(pos + 1) * d]
    }

    pub fn get(&self, b: usize, h: usize, s: usize, d: usize) -> T {
        let Dims {
            heads,
            seq,
            head_dim,
            ..
        } = self.dims;
        self.data[((b * heads + h) * seq + s) * head_dim + d]
    }

    pub fn set(&mut self, b: usize, h: usize, s: usize, d: usize, value: T) {
        let Dims {
            heads,
            seq,
            head_dim,
            ..
        } = self.dims;
        self.data[((b * heads + h) * seq + s) * head_dim + d] = value;
    }

    /// Copy of the sequence positions in `range`, for every slab.
    pub fn slice_seq(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.dims.seq {
            return Err(AttnError::Shape(format!(
                "sequence slice {range:?} out of bounds for seq {}",
                self.dims.seq
            )));
        }
        let d = self.dims.head_dim;
        let mut data = Vec::with_capacity(self.dims.slabs() * range.len() * d);
        for s in 0..self.dims.slabs() {
            data.extend_from_slice(&self.slab(s)[range.start * d..range.end * d]);
        }
        Ok(AttnTensor::from_raw(self.dims.with_seq(range.len()), data))
    }

    /// Concatenation along the sequence axis.
    pub fn concat_seq(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| AttnError::Shape("concat of zero tensors".into()))?;
        let base = first.dims;
        for p in parts {
            let pd = p.dims;
            if (pd.batch, pd.heads, pd.head_dim) != (base.batch, base.heads, base.head_dim) {
                return Err(AttnError::Shape(format!(
                    "cannot concat {pd} with {base} along seq"
                )));
            }
        }
        let seq = parts.iter().map(|p| p.dims.seq).sum();
        let mut data = Vec::with_capacity(base.slabs() * seq * base.head_dim);
        for s in 0..base.slabs() {
            for p in parts {
                data.extend_from_slice(p.slab(s));
            }
        }
        Ok(AttnTensor::from_raw(base.with_seq(seq), data))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        AttnTensor::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(AttnError::Shape(format!(
                "elementwise op on {} and {}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(AttnTensor::from_raw(self.dims, data))
    }

    pub fn cast<U: Scalar>(&self) -> AttnTensor<U> {
        AttnTensor::from_raw(
            self.dims,
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    /// Largest elementwise absolute difference, computed in f64.
    pub fn max_abs_diff<U: Scalar>(&self, other: &AttnTensor<U>) -> Result<f64> {
        if self.dims != other.dims() {
            return Err(AttnError::Shape(format!(
                "cannot compare {} with {}",
                self.dims,
                other.dims()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }
}

/// Largest absolute difference of two LSE vectors. Matching `-inf`
/// entries count as equal.
pub fn max_lse_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "lse length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks() {
        let dims = Dims::new(1, 1, 2, 2);
        assert!(AttnTensor::<f32>::from_vec(dims, vec![0.0; 3]).is_err());
        assert_eq!(
            AttnTensor::<f64>::from_vec(dims, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(AttnError::NonFinite { index: 1 })
        );
        assert!(AttnTensor::<f32>::from_vec(dims, vec![1.0; 4]).is_ok());
        let huge = Dims::new(usize::MAX, 2, 1, 1);
        assert!(matches!(
            AttnTensor::<f32>::zeros(huge),
            Err(AttnError::DimOverflow(_))
        ));
    }

    #[test]
    fn slice_concat_roundtrip() {
        let dims = Dims::new(2, 3, 5, 2);
        let data: Vec<f64> = (0..dims.checked_len().unwrap()).map(|i| i as f64).collect();
        let t = AttnTensor::from_vec(dims, data).unwrap();
        let a = t.slice_seq(0..2).unwrap();
        let b = t.slice_seq(2..2).unwrap();
        let c = t.slice_seq(2..5).unwrap();
        assert_eq!(c.row(1, 0), t.row(1, 2));
        let back = AttnTensor::concat_seq(&[&a, &b, &c]).unwrap();
        assert_eq!(back, t);
        assert!(t.slice_seq(4..6).is_err());
    }

    #[test]
    fn lse_diff_treats_matching_infinities_as_equal() {
        let ninf = f64::NEG_INFINITY;
        assert_eq!(max_lse_diff(&[ninf, 1.0], &[ninf, 1.5]), 0.5);
        assert!(max_lse_diff(&[ninf], &[0.0]).is_infinite());
    }
}
