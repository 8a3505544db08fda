//! Dense row-major `f64` tensors.
//!
//! The tensor is deliberately minimal: a shape and a flat buffer.  Values are
//! checked to be finite at every public construction site so NaN/Inf cannot
//! enter the numeric pipeline silently.

use crate::error::{Error, Result};

/// Dense tensor with row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Tensor from a shape and matching flat data; rejects shape/data length
    /// mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len == 0 {
            return Err(Error::Dimension("tensor shape must be non-empty with positive extents".into()));
        }
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite tensor element {bad}")));
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor over `data`; rejects non-finite values.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    /// Internal constructor for values produced by crate arithmetic.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    /// Shape extents.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor holds no elements (never true for valid tensors).
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat element slice, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat element slice, row-major.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same buffer under a new shape of equal total length.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        Ok(Self { shape, data: self.data.clone() })
    }

    /// Euclidean norm of the flattened tensor.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max-absolute-value norm of the flattened tensor.
    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Euclidean distance to `other`; shapes must carry equal element counts.
    pub fn l2_distance(&self, other: &Tensor) -> Result<f64> {
        self.check_same_len(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(s.sqrt())
    }

    /// Max-absolute elementwise distance to `other`.
    pub fn linf_distance(&self, other: &Tensor) -> Result<f64> {
        self.check_same_len(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Index of the maximum element; ties resolve to the first occurrence.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Elementwise clamp into `[0, 1]`.
    pub fn clamp01(&self) -> Tensor {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::from_parts(self.shape.clone(), data)
    }

    /// Elementwise sum with `other`.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_len(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_len(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    /// Elementwise scaling by `c`.
    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data.iter().map(|v| v * c).collect();
        Self::from_parts(self.shape.clone(), data)
    }

    /// Apply `f` to every element.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|v| f(*v)).collect();
        Self::from_parts(self.shape.clone(), data)
    }

    fn check_same_len(&self, other: &Tensor) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::Dimension(format!(
                "element counts differ: {} vs {}",
                self.data.len(),
                other.data.len()
            )));
        }
        Ok(())
    }
}
