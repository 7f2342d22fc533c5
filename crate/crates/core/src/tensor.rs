//! Dense 4-D tensor in `[batch, channel, row, col]` layout, C order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense multi-dimensional array with an optional co-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n], grad: None }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "tensor shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, r: usize, col: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + r) * self.shape[3] + col
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, r: usize, col: usize) -> T {
        self.data[self.index(b, c, r, col)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, r: usize, col: usize, v: T) {
        let i = self.index(b, c, r, col);
        self.data[i] = v;
    }

    /// One `[row, col]` plane, contiguous.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[T] {
        let n = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * n;
        &self.data[start..start + n]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let n = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * n;
        &mut self.data[start..start + n]
    }

    #[inline]
    pub fn row(&self, b: usize, c: usize, r: usize) -> &[T] {
        let w = self.shape[3];
        let start = ((b * self.shape[1] + c) * self.shape[2] + r) * w;
        &self.data[start..start + w]
    }

    /// Allocates (or clears) the gradient buffer.
    pub fn alloc_grad(&mut self) {
        self.grad = Some(vec![T::zero(); self.data.len()]);
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient length {} does not match tensor length {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maps the element type; used to move models/batches between precisions.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_s(v.to_f64_s())).collect(),
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_c_order() {
        let mut t = Tensor::<f32>::zeros([2, 3, 4, 5]);
        t.set(1, 2, 3, 4, 7.0);
        assert_eq!(t.data()[t.len() - 1], 7.0);
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
        assert_eq!(t.row(1, 2, 3)[4], 7.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn grad_is_co_shaped() {
        let mut t = Tensor::<f64>::zeros([1, 1, 2, 2]);
        assert!(t.grad().is_none());
        t.alloc_grad();
        assert_eq!(t.grad().unwrap().len(), 4);
        assert!(t.set_grad(vec![0.0; 5]).is_err());
    }
}
