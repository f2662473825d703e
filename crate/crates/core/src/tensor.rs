//! Dense row-major tensor of double-precision values.
//!
//! `Tensor` is the universal value for volumes, feature maps and parameters.
//! Values are immutable once shared; mutation requires exclusive ownership,
//! so tensors are safe to share across threads.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    ///
    /// Every dimension must be positive and `data.len()` must equal the
    /// product of the dimensions.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() {
            return Err(Error::dim("tensor shape must have at least one axis"));
        }
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::dim(format!("axis {axis} has zero extent")));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::dim(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![0.0; n])
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    /// A single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim(format!(
                "item() on tensor with {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Row-major offset of `[b, c, i, j]` in a rank-4 tensor.
    #[inline]
    pub fn idx4(&self, b: usize, c: usize, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((b * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx4(b, c, i, j)]
    }

    /// Row-major offset of `[r, c]` in a rank-2 tensor.
    #[inline]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        r * self.shape[1] + c
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[self.idx2(r, c)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
