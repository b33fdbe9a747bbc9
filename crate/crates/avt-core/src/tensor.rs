//! A minimal dense tensor: row-major `f32` values plus a shape.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let count: usize = dims.iter().product();
        if count != values.len() {
            return Err(Error::ShapeMismatch);
        }
        Ok(Tensor { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let count: usize = dims.iter().product();
        Tensor {
            dims,
            values: alloc::vec![0.0; count],
        }
    }

    /// 1-D tensor from raw values.
    pub fn from_vec(values: Vec<f32>) -> Self {
        Tensor {
            dims: alloc::vec![values.len()],
            values,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Leading dimension, i.e. the sample count for an `n x d` batch.
    pub fn rows(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Elements per row for a 2-D batch; the full length for 1-D.
    pub fn row_len(&self) -> usize {
        if self.dims.len() <= 1 {
            self.values.len()
        } else {
            self.dims[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let w = self.row_len();
        &mut self.values[i * w..(i + 1) * w]
    }

    pub fn clamp_in_place(&mut self, lo: f32, hi: f32) {
        for v in self.values.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn map_in_place(&mut self, f: impl Fn(f32) -> f32) {
        for v in self.values.iter_mut() {
            *v = f(*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_count() {
        assert_eq!(
            Tensor::new(alloc::vec![2, 3], alloc::vec![0.0; 5]).unwrap_err(),
            Error::ShapeMismatch
        );
    }

    #[test]
    fn rows_and_row_len() {
        let t = Tensor::new(alloc::vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.row_len(), 3);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn zero_element_tensor() {
        let t = Tensor::new(alloc::vec![0, 4], alloc::vec![]).unwrap();
        assert_eq!(t.rows(), 0);
        assert!(t.is_empty());
    }
}
