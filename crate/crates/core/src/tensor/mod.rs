//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]; differentiable computation is recorded on a
//! [`Tape`] and addressed through [`Var`] handles. Every operation validates
//! its shapes up front and rejects non-finite results.

pub(crate) mod conv;
mod elementwise;
mod gradcheck;
mod linear;
mod loss;
mod pool;
mod reduce;
mod shape;
mod softmax;
mod ssim;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use elementwise::BinaryMode;
pub use gradcheck::finite_diff_check;
pub use reduce::ReduceMode;
pub use ssim::{ssim_plane, SsimConstants};
pub use tape::{Tape, Var};

/// Floating-point scalar usable by the engine (`f32` for training, `f64` for
/// verification).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working precision.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in working precision")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { op: &'static str, axis: usize, rank: usize },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{op}: reduction over an empty tensor")]
    EmptyReduction { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed by a backward pass")]
    TapeSpent,
    #[error("function is not deterministic: two evaluations at the same point differ")]
    NonDeterministic,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..numel).map(f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("cannot view {:?} as {shape:?}", self.shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        narrow_check("narrow", &self.shape, start, len)?;
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self { shape, data: self.data[start * row..(start + len) * row].to_vec() })
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Self> {
        let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
        let shape = concat_shape(&shapes)?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

pub(crate) fn narrow_check(op: &'static str, shape: &[usize], start: usize, len: usize) -> Result<()> {
    if shape.is_empty() {
        return Err(TensorError::AxisOutOfRange { op, axis: 0, rank: 0 });
    }
    if len == 0 || start + len > shape[0] {
        return Err(TensorError::InvalidArgument {
            op,
            detail: format!("rows {start}..{} outside leading dimension {}", start + len, shape[0]),
        });
    }
    Ok(())
}

pub(crate) fn concat_shape(shapes: &[&[usize]]) -> Result<Vec<usize>> {
    let first = shapes.first().ok_or_else(|| TensorError::InvalidArgument {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    if first.is_empty() {
        return Err(TensorError::AxisOutOfRange { op: "concat", axis: 0, rank: 0 });
    }
    let mut lead = 0;
    for s in shapes {
        if s.len() != first.len() || s[1..] != first[1..] {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("trailing dimensions {:?} vs {:?}", &s[1..], &first[1..]),
            });
        }
        lead += s[0];
    }
    let mut shape = first.to_vec();
    shape[0] = lead;
    Ok(shape)
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn ensure_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }

    #[test]
    fn at_indexes_row_major() {
        let t = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(t.at(&[0, 1]), 1.0);
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let t = Tensor::<f64>::from_fn(&[4, 2], |i| i as f64);
        let a = t.narrow(0, 1).unwrap();
        let b = t.narrow(1, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b]).unwrap(), t);
        assert!(t.narrow(3, 2).is_err());
    }
}
