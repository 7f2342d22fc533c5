//! Batch normalization with running statistics.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel scale/shift plus running statistics.
///
/// Variances are population (divide-by-m) estimates, both for batch
/// normalization and for the running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64_s(x.to_f64_s())).collect();
        BatchNormParams {
            scale: c(&self.scale),
            shift: c(&self.shift),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }
}

fn check_channels<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<()> {
    if x.channels() != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "batch norm has {} channels, input has {}",
            p.channels(),
            x.channels()
        )));
    }
    Ok(())
}

/// Per-channel batch mean and population variance over (batch, row, col).
fn batch_stats<T: Scalar>(x: &Tensor<T>, c: usize) -> (f64, f64) {
    let m = (x.batch() * x.rows() * x.cols()) as f64;
    let mut sum = 0.0f64;
    for b in 0..x.batch() {
        for v in x.plane(b, c) {
            sum += v.to_f64_s();
        }
    }
    let mean = sum / m;
    let mut sq = 0.0f64;
    for b in 0..x.batch() {
        for v in x.plane(b, c) {
            let d = v.to_f64_s() - mean;
            sq += d * d;
        }
    }
    (mean, sq / m)
}

/// Training-mode forward: normalize by batch statistics, apply scale and
/// shift, and fold the batch statistics into the running buffers.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BatchNormParams<T>,
) -> Result<Tensor<T>> {
    check_channels(x, p)?;
    let mut out = Tensor::zeros(x.shape());
    for c in 0..p.channels() {
        let (mean, var) = batch_stats(x, c);
        let inv = 1.0 / (var + p.epsilon).sqrt();
        let scale = p.scale[c].to_f64_s();
        let shift = p.shift[c].to_f64_s();
        for b in 0..x.batch() {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for (o, v) in dst.iter_mut().zip(src) {
                *o = T::from_f64_s((v.to_f64_s() - mean) * inv * scale + shift);
            }
        }
        let mom = p.momentum;
        p.running_mean[c] =
            T::from_f64_s(mom * p.running_mean[c].to_f64_s() + (1.0 - mom) * mean);
        p.running_var[c] = T::from_f64_s(mom * p.running_var[c].to_f64_s() + (1.0 - mom) * var);
    }
    Ok(out)
}

/// Inference-mode forward: normalize by the running statistics.
pub fn batchnorm_forward_eval<T: Scalar>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
) -> Result<Tensor<T>> {
    check_channels(x, p)?;
    let mut out = Tensor::zeros(x.shape());
    for c in 0..p.channels() {
        let inv = 1.0 / (p.running_var[c].to_f64_s() + p.epsilon).sqrt();
        let mean = p.running_mean[c].to_f64_s();
        let scale = p.scale[c].to_f64_s();
        let shift = p.shift[c].to_f64_s();
        for b in 0..x.batch() {
            let src = x.plane(b, c);
            let dst = out.plane_mut(b, c);
            for (o, v) in dst.iter_mut().zip(src) {
                *o = T::from_f64_s((v.to_f64_s() - mean) * inv * scale + shift);
            }
        }
    }
    Ok(out)
}

/// Gradients of the training-mode forward with respect to the input, scale
/// and shift. Batch statistics are recomputed from `x`.
pub fn batchnorm_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    check_channels(x, p)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::ShapeMismatch("batch norm grad_out shape".into()));
    }
    let m = (x.batch() * x.rows() * x.cols()) as f64;
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_scale = vec![T::zero(); p.channels()];
    let mut grad_shift = vec![T::zero(); p.channels()];

    for c in 0..p.channels() {
        let (mean, var) = batch_stats(x, c);
        let inv = 1.0 / (var + p.epsilon).sqrt();
        let scale = p.scale[c].to_f64_s();

        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64; // sum of g * x_hat
        for b in 0..x.batch() {
            let xs = x.plane(b, c);
            let gs = grad_out.plane(b, c);
            for (xv, gv) in xs.iter().zip(gs) {
                let g = gv.to_f64_s();
                let xh = (xv.to_f64_s() - mean) * inv;
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        grad_shift[c] = T::from_f64_s(sum_g);
        grad_scale[c] = T::from_f64_s(sum_gx);

        // dx = (scale * inv) * (g - sum_g/m - x_hat * sum_gx/m)
        for b in 0..x.batch() {
            let xs = x.plane(b, c);
            let gs = grad_out.plane(b, c);
            let dst = grad_x.plane_mut(b, c);
            for ((xv, gv), o) in xs.iter().zip(gs).zip(dst.iter_mut()) {
                let g = gv.to_f64_s();
                let xh = (xv.to_f64_s() - mean) * inv;
                *o = T::from_f64_s(scale * inv * (g - sum_g / m - xh * sum_gx / m));
            }
        }
    }
    Ok((grad_x, grad_scale, grad_shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rngish(n: usize) -> Vec<f32> {
        (0..n).map(|i| ((i * 2654435761usize) % 1000) as f32 / 250.0 - 2.0).collect()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x = Tensor::from_vec([2, 3, 4, 5], rngish(2 * 3 * 4 * 5)).unwrap();
        let mut p = BatchNormParams::<f32>::new(3);
        let y = batchnorm_forward_train(&x, &mut p).unwrap();
        for c in 0..3 {
            let (mean, var) = batch_stats(&y, c);
            assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn eval_identity_parameters_pass_input_through() {
        let x = Tensor::from_vec([1, 2, 3, 3], rngish(18)).unwrap();
        let mut p = BatchNormParams::<f32>::new(2);
        p.epsilon = 1e-12;
        let y = batchnorm_forward_eval(&x, &p).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_in_train_mode_collapses_to_shift() {
        let x = Tensor::from_vec([2, 1, 2, 2], vec![5.0f32; 8]).unwrap();
        let mut p = BatchNormParams::<f32>::new(1);
        p.shift[0] = 0.75;
        let y = batchnorm_forward_train(&x, &mut p).unwrap();
        for v in y.data() {
            assert!((v - 0.75).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0f32, 3.0]).unwrap();
        let mut p = BatchNormParams::<f32>::new(1);
        batchnorm_forward_train(&x, &mut p).unwrap();
        // batch mean 2, population var 1; running starts at (0, 1)
        assert!((p.running_mean[0] - 0.2).abs() < 1e-6);
        assert!((p.running_var[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shift_gradient_is_sum_of_grad_out() {
        let x = Tensor::from_vec([1, 2, 2, 2], rngish(8)).unwrap();
        let g = Tensor::from_vec([1, 2, 2, 2], vec![0.5f32; 8]).unwrap();
        let p = BatchNormParams::<f32>::new(2);
        let (_, _, gshift) = batchnorm_backward(&x, &p, &g).unwrap();
        assert!((gshift[0] - 2.0).abs() < 1e-6);
        assert!((gshift[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_out_zeroes_scale_gradient() {
        let x = Tensor::from_vec([1, 1, 2, 2], rngish(4)).unwrap();
        let g = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let p = BatchNormParams::<f32>::new(1);
        let (gx, gscale, gshift) = batchnorm_backward(&x, &p, &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert_eq!(gscale[0], 0.0);
        assert_eq!(gshift[0], 0.0);
    }
}
