//! Softmax normalization over disjoint channel groups.
//!
//! The network emits two independent four-way distributions per voxel (one
//! per cardiac phase), so the softmax runs separately within each channel
//! group. Channels not covered by any group pass through unchanged.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn validate_groups<T: Scalar>(x: &Tensor<T>, groups: &[Vec<usize>]) -> Result<()> {
    let mut seen = vec![false; x.channels()];
    for group in groups {
        if group.is_empty() {
            return Err(Error::Invalid("softmax group must be non-empty".into()));
        }
        for &c in group {
            if c >= x.channels() {
                return Err(Error::ShapeMismatch(format!(
                    "softmax group channel {c} out of range (tensor has {})",
                    x.channels()
                )));
            }
            if seen[c] {
                return Err(Error::Invalid(format!("softmax groups overlap on channel {c}")));
            }
            seen[c] = true;
        }
    }
    Ok(())
}

/// Voxel-wise softmax within each channel group, stabilized by
/// max-subtraction.
pub fn grouped_softmax<T: Scalar>(x: &Tensor<T>, groups: &[Vec<usize>]) -> Result<Tensor<T>> {
    validate_groups(x, groups)?;
    let mut out = x.clone();
    let (h, w) = (x.rows(), x.cols());
    let plane = h * w;
    let mut vals = Vec::new();
    for b in 0..x.batch() {
        for pos in 0..plane {
            for group in groups {
                vals.clear();
                let mut maxv = f64::NEG_INFINITY;
                for &c in group {
                    let v = x.data()[(b * x.channels() + c) * plane + pos].to_f64_s();
                    maxv = maxv.max(v);
                    vals.push(v);
                }
                let mut sum = 0.0f64;
                for v in vals.iter_mut() {
                    *v = (*v - maxv).exp();
                    sum += *v;
                }
                for (&c, &e) in group.iter().zip(&vals) {
                    out.data_mut()[(b * x.channels() + c) * plane + pos] =
                        T::from_f64_s(e / sum);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient through [`grouped_softmax`] given the forward output `probs`.
///
/// Per voxel and group: `dL/dz_c = p_c * (g_c - sum_k g_k p_k)`. Gradients of
/// channels outside every group pass through unchanged.
pub fn grouped_softmax_backward<T: Scalar>(
    probs: &Tensor<T>,
    groups: &[Vec<usize>],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    validate_groups(probs, groups)?;
    if probs.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch("softmax grad_out shape".into()));
    }
    let mut grad_in = grad_out.clone();
    let plane = probs.rows() * probs.cols();
    for b in 0..probs.batch() {
        for pos in 0..plane {
            for group in groups {
                let mut dot = 0.0f64;
                for &c in group {
                    let idx = (b * probs.channels() + c) * plane + pos;
                    dot += grad_out.data()[idx].to_f64_s() * probs.data()[idx].to_f64_s();
                }
                for &c in group {
                    let idx = (b * probs.channels() + c) * plane + pos;
                    let p = probs.data()[idx].to_f64_s();
                    let g = grad_out.data()[idx].to_f64_s();
                    grad_in.data_mut()[idx] = T::from_f64_s(p * (g - dot));
                }
            }
        }
    }
    Ok(grad_in)
}
