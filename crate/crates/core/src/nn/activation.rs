//! Rectified linear activation.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Passes `grad_out` through where the forward input was positive; the
/// gradient is masked wherever `x <= 0`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.shape(), grad_out.shape(), "relu_backward shape mismatch");
    let mut out = grad_out.clone();
    for (g, v) in out.data_mut().iter_mut().zip(x.data()) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives_keeps_positives() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-2.0f32, -0.0, 0.5, 3.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 3.0]);
    }

    #[test]
    fn backward_masks_non_positive_inputs() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-1.0f32, 0.0, 1e-6, 2.0]).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 4], vec![1.0f32; 4]).unwrap();
        let gx = relu_backward(&x, &g);
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
