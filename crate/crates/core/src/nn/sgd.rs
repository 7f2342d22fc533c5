//! Stochastic gradient descent update with L2 regularization.

use crate::scalar::Scalar;

/// In-place update `p <- p - lr * (g + weight_decay * p)`.
///
/// Pass `weight_decay = 0` for parameters excluded from regularization
/// (batch-norm scale and shift).
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len(), "sgd_step length mismatch");
    let lr = T::from_f64_s(lr);
    let wd = T::from_f64_s(weight_decay);
    for (p, g) in params.iter_mut().zip(grads) {
        *p = *p - lr * (*g + wd * *p);
    }
}

/// Momentum variant: `v <- mu * v + (g + weight_decay * p)`, then
/// `p <- p - lr * v`. With `mu = 0` this reduces to [`sgd_step`].
pub fn sgd_step_momentum<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    weight_decay: f64,
    mu: f64,
) {
    assert_eq!(params.len(), grads.len(), "sgd_step length mismatch");
    assert_eq!(params.len(), velocity.len(), "sgd velocity length mismatch");
    let lr = T::from_f64_s(lr);
    let wd = T::from_f64_s(weight_decay);
    let mu = T::from_f64_s(mu);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + (*g + wd * *p);
        *p = *p - lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut p = vec![1.0f32, -2.0, 3.5];
        sgd_step(&mut p, &[10.0, 10.0, 10.0], 0.0, 0.1);
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn pure_decay_shrinks_parameters() {
        let mut p = vec![2.0f64];
        sgd_step(&mut p, &[0.0], 0.5, 0.1);
        assert!((p[0] - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = vec![1.0f32];
        sgd_step(&mut p, &[1.0], 0.1, 0.0);
        assert!((p[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_momentum_matches_plain_sgd() {
        let g = vec![0.3f64, -1.2, 0.0];
        let mut a = vec![1.0f64, 2.0, -0.5];
        let mut b = a.clone();
        let mut v = vec![0.0f64; 3];
        sgd_step(&mut a, &g, 0.05, 1e-3);
        sgd_step_momentum(&mut b, &g, &mut v, 0.05, 1e-3, 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = vec![0.0f64];
        let mut v = vec![0.0f64];
        sgd_step_momentum(&mut p, &[1.0], &mut v, 1.0, 0.0, 0.9);
        assert_eq!(p, vec![-1.0]); // v = 1
        sgd_step_momentum(&mut p, &[1.0], &mut v, 1.0, 0.0, 0.9);
        assert!((p[0] + 1.0 + 1.9).abs() < 1e-12); // v = 0.9 + 1
    }
}
