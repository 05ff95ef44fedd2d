//! Dense n-dimensional arrays of finite `f64` values in row-major order.
//!
//! The tensor is the carrier for images, weights, activations and relevance.
//! Values are validated to be finite at construction; every public operation
//! returns tensors that uphold the same guarantee.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced by tensor construction and shape operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// Flat data length does not match the product of the shape extents.
    DataLength { expected: usize, got: usize },
    /// A non-finite value (NaN or infinity) was found at the given flat index.
    NonFinite { index: usize },
    /// Reshape target has a different element count than the source.
    ShapeProduct { expected: usize, got: usize },
    /// Axis index is out of range for the tensor rank.
    AxisOutOfRange { axis: usize, rank: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::NonFinite { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            TensorError::ShapeProduct { expected, got } => {
                write!(f, "reshape product mismatch: have {expected} elements, target wants {got}")
            }
            TensorError::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
        }
    }
}

impl core::error::Error for TensorError {}

/// Dense n-dimensional array with row-major storage (last axis fastest).
///
/// Immutable after construction; all operations build new tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the length invariant and rejecting NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        for (index, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { index });
            }
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Constant-filled tensor. `value` must be finite.
    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { index: 0 });
        }
        let n: usize = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![value; n],
        })
    }

    /// Single-element rank-1 tensor, used for scalar relevance injection.
    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Tensor::new(vec![1], vec![value])
    }

    /// Internal constructor for data already known to be finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Tensor { shape, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Same data under a new shape. Errors when the element counts differ.
    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let target: usize = new_shape.iter().product();
        if target != self.data.len() {
            return Err(TensorError::ShapeProduct {
                expected: self.data.len(),
                got: target,
            });
        }
        Ok(Tensor {
            shape: new_shape,
            data: self.data.clone(),
        })
    }

    /// Elementwise `max(v, 0)`.
    pub fn truncate_positive(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Elementwise `min(v, 0)`.
    pub fn truncate_negative(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&v| if v < 0.0 { v } else { 0.0 })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Sum of all elements, accumulated left to right over the flat
    /// row-major sequence so results are reproducible across runs.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Sum along one axis; the result drops that axis. Accumulation runs in
    /// increasing index order along the reduced axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor, TensorError> {
        if axis >= self.shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: self.shape.len(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                let base = (o * extent + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += self.data[base + i];
                }
            }
        }
        let mut new_shape = Vec::with_capacity(self.shape.len() - 1);
        new_shape.extend_from_slice(&self.shape[..axis]);
        new_shape.extend_from_slice(&self.shape[axis + 1..]);
        Ok(Tensor {
            shape: new_shape,
            data: out,
        })
    }
}
