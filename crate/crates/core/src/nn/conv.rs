//! Dilated 2-D convolution, valid (unpadded), with analytic gradients.
//!
//! Kernels accumulate in `f64` and process output channels in blocks of
//! four so each input row is loaded and widened once per four
//! multiply-accumulates. Every output element's reduction runs in a fixed
//! (channel, tap) order, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameters of one convolution layer.
///
/// Weights are stored `[out_ch, in_ch, k, k]` in C order. Hidden layers use
/// 3x3 kernels; the output layer uses 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayerParams<T> {
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        kernel: usize,
        dilation: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Invalid(format!("kernel size must be 1 or 3, got {kernel}")));
        }
        if dilation < 1 {
            return Err(Error::Invalid("dilation must be >= 1".into()));
        }
        if weights.len() != out_ch * in_ch * kernel * kernel {
            return Err(Error::ShapeMismatch(format!(
                "conv weights: expected {} values, got {}",
                out_ch * in_ch * kernel * kernel,
                weights.len()
            )));
        }
        if bias.len() != out_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv bias: expected {out_ch} values, got {}",
                bias.len()
            )));
        }
        Ok(ConvLayerParams { out_ch, in_ch, kernel, dilation, weights, bias })
    }

    /// Spatial shrink per axis: `dilation * (kernel - 1)`.
    #[inline]
    pub fn margin(&self) -> usize {
        self.dilation * (self.kernel - 1)
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayerParams<U> {
        ConvLayerParams {
            out_ch: self.out_ch,
            in_ch: self.in_ch,
            kernel: self.kernel,
            dilation: self.dilation,
            weights: self.weights.iter().map(|v| U::from_f64_s(v.to_f64_s())).collect(),
            bias: self.bias.iter().map(|v| U::from_f64_s(v.to_f64_s())).collect(),
        }
    }
}

fn output_dims<T: Scalar>(x: &Tensor<T>, p: &ConvLayerParams<T>) -> Result<(usize, usize)> {
    if x.channels() != p.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            p.in_ch,
            x.channels()
        )));
    }
    let m = p.margin();
    if x.rows() <= m || x.cols() <= m {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{} too small for kernel {} with dilation {}",
            x.rows(),
            x.cols(),
            p.kernel,
            p.dilation
        )));
    }
    Ok((x.rows() - m, x.cols() - m))
}

/// How many output channels one parallel task covers.
const OC_BLOCK: usize = 4;

/// Splits the output buffer into (batch, first-channel, plane-group) tasks
/// of up to `OC_BLOCK` consecutive channel planes.
fn channel_blocks<'a, T>(
    data: &'a mut [T],
    batch: usize,
    channels: usize,
    plane_len: usize,
) -> Vec<(usize, usize, usize, &'a mut [T])> {
    let mut tasks = Vec::with_capacity(batch * channels.div_ceil(OC_BLOCK));
    let mut rest = data;
    for b in 0..batch {
        let mut c = 0;
        while c < channels {
            let nb = OC_BLOCK.min(channels - c);
            let (head, tail) = rest.split_at_mut(nb * plane_len);
            tasks.push((b, c, nb, head));
            rest = tail;
            c += nb;
        }
    }
    tasks
}

/// Valid dilated convolution. Output extent is `input - dilation*(k-1)` per
/// spatial axis; the bias is added per output channel.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvLayerParams<T>) -> Result<Tensor<T>> {
    let (h_out, w_out) = output_dims(x, p)?;
    let (k, d, w_in) = (p.kernel, p.dilation, x.cols());
    let mut out = Tensor::zeros([x.batch(), p.out_ch, h_out, w_out]);
    let plane_len = h_out * w_out;
    let kk = k * k;

    channel_blocks(out.data_mut(), x.batch(), p.out_ch, plane_len)
        .into_par_iter()
        .for_each(|(b, oc0, nb, chunk)| {
            let mut acc = vec![0.0f64; nb * w_out];
            for i in 0..h_out {
                for r in 0..nb {
                    acc[r * w_out..(r + 1) * w_out].fill(p.bias[oc0 + r].to_f64_s());
                }
                for ic in 0..p.in_ch {
                    let xplane = x.plane(b, ic);
                    for u in 0..k {
                        let xrow = &xplane[(i + u * d) * w_in..(i + u * d) * w_in + w_in];
                        for v in 0..k {
                            let xs = &xrow[v * d..v * d + w_out];
                            let wat = |r: usize| {
                                p.weights[((oc0 + r) * p.in_ch + ic) * kk + u * k + v]
                                    .to_f64_s()
                            };
                            if nb == OC_BLOCK {
                                let (w0, w1, w2, w3) = (wat(0), wat(1), wat(2), wat(3));
                                let (a0, rest) = acc.split_at_mut(w_out);
                                let (a1, rest) = rest.split_at_mut(w_out);
                                let (a2, a3) = rest.split_at_mut(w_out);
                                for ((((xv, a0), a1), a2), a3) in
                                    xs.iter().zip(a0).zip(a1).zip(a2).zip(a3)
                                {
                                    let xv = xv.to_f64_s();
                                    *a0 += w0 * xv;
                                    *a1 += w1 * xv;
                                    *a2 += w2 * xv;
                                    *a3 += w3 * xv;
                                }
                            } else {
                                for r in 0..nb {
                                    let w = wat(r);
                                    for (a, xv) in
                                        acc[r * w_out..(r + 1) * w_out].iter_mut().zip(xs)
                                    {
                                        *a += w * xv.to_f64_s();
                                    }
                                }
                            }
                        }
                    }
                }
                for r in 0..nb {
                    let dst = &mut chunk[r * plane_len + i * w_out..r * plane_len + (i + 1) * w_out];
                    for (o, a) in dst.iter_mut().zip(&acc[r * w_out..(r + 1) * w_out]) {
                        *o = T::from_f64_s(*a);
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvLayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (h_out, w_out) = output_dims(x, p)?;
    if grad_out.shape() != [x.batch(), p.out_ch, h_out, w_out] {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?} does not match conv output {:?}",
            grad_out.shape(),
            [x.batch(), p.out_ch, h_out, w_out]
        )));
    }
    let (k, d, w_in, h_in) = (p.kernel, p.dilation, x.cols(), x.rows());
    let kk = k * k;
    let wk = p.in_ch * kk;

    // Weight and bias gradients: one task per block of output channels;
    // accumulation order (batch, row, col) is fixed within each channel.
    let mut grad_w = vec![T::zero(); p.out_ch * wk];
    let mut grad_b = vec![T::zero(); p.out_ch];
    let gw_tasks: Vec<(usize, usize, &mut [T], &mut [T])> = {
        let mut tasks = Vec::new();
        let mut w_rest = &mut grad_w[..];
        let mut b_rest = &mut grad_b[..];
        let mut oc = 0;
        while oc < p.out_ch {
            let nb = OC_BLOCK.min(p.out_ch - oc);
            let (w_head, w_tail) = w_rest.split_at_mut(nb * wk);
            let (b_head, b_tail) = b_rest.split_at_mut(nb);
            tasks.push((oc, nb, w_head, b_head));
            w_rest = w_tail;
            b_rest = b_tail;
            oc += nb;
        }
        tasks
    };
    gw_tasks.into_par_iter().for_each(|(oc0, nb, gw_slab, gb_slab)| {
        let mut gw = vec![0.0f64; nb * wk];
        let mut gb = vec![0.0f64; nb];
        for b in 0..x.batch() {
            for i in 0..h_out {
                let grows: Vec<&[T]> = (0..nb).map(|r| grad_out.row(b, oc0 + r, i)).collect();
                for (r, grow) in grows.iter().enumerate() {
                    let mut s = 0.0f64;
                    for g in *grow {
                        s += g.to_f64_s();
                    }
                    gb[r] += s;
                }
                for ic in 0..p.in_ch {
                    let xplane = x.plane(b, ic);
                    for u in 0..k {
                        let xrow = &xplane[(i + u * d) * w_in..(i + u * d) * w_in + w_in];
                        for v in 0..k {
                            let xs = &xrow[v * d..v * d + w_out];
                            if nb == OC_BLOCK {
                                let (mut d0, mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0, 0.0);
                                for ((((xv, g0), g1), g2), g3) in xs
                                    .iter()
                                    .zip(grows[0])
                                    .zip(grows[1])
                                    .zip(grows[2])
                                    .zip(grows[3])
                                {
                                    let xv = xv.to_f64_s();
                                    d0 += g0.to_f64_s() * xv;
                                    d1 += g1.to_f64_s() * xv;
                                    d2 += g2.to_f64_s() * xv;
                                    d3 += g3.to_f64_s() * xv;
                                }
                                let tap = ic * kk + u * k + v;
                                gw[tap] += d0;
                                gw[wk + tap] += d1;
                                gw[2 * wk + tap] += d2;
                                gw[3 * wk + tap] += d3;
                            } else {
                                for (r, grow) in grows.iter().enumerate() {
                                    let mut dot = 0.0f64;
                                    for (g, xv) in grow.iter().zip(xs) {
                                        dot += g.to_f64_s() * xv.to_f64_s();
                                    }
                                    gw[r * wk + ic * kk + u * k + v] += dot;
                                }
                            }
                        }
                    }
                }
            }
        }
        for (dst, v) in gw_slab.iter_mut().zip(&gw) {
            *dst = T::from_f64_s(*v);
        }
        for (dst, v) in gb_slab.iter_mut().zip(&gb) {
            *dst = T::from_f64_s(*v);
        }
    });

    // Input gradient: one task per (batch, input-channel) plane; each input
    // element accumulates over (oc, u, v) in fixed order.
    let mut grad_x = Tensor::zeros(x.shape());
    let plane_len = h_in * w_in;
    grad_x.data_mut().par_chunks_mut(plane_len).enumerate().for_each(|(idx, plane)| {
        let b = idx / p.in_ch;
        let ic = idx % p.in_ch;
        let mut acc = vec![0.0f64; plane_len];
        let mut oc0 = 0;
        while oc0 < p.out_ch {
            let nb = OC_BLOCK.min(p.out_ch - oc0);
            for u in 0..k {
                for v in 0..k {
                    let wat = |r: usize| {
                        p.weights[((oc0 + r) * p.in_ch + ic) * kk + u * k + v].to_f64_s()
                    };
                    for i in 0..h_out {
                        let dst_off = (i + u * d) * w_in + v * d;
                        let dst = &mut acc[dst_off..dst_off + w_out];
                        if nb == OC_BLOCK {
                            let (w0, w1, w2, w3) = (wat(0), wat(1), wat(2), wat(3));
                            let g0 = &grad_out.row(b, oc0, i)[..w_out];
                            let g1 = &grad_out.row(b, oc0 + 1, i)[..w_out];
                            let g2 = &grad_out.row(b, oc0 + 2, i)[..w_out];
                            let g3 = &grad_out.row(b, oc0 + 3, i)[..w_out];
                            for ((((a, g0), g1), g2), g3) in
                                dst.iter_mut().zip(g0).zip(g1).zip(g2).zip(g3)
                            {
                                *a += w0 * g0.to_f64_s();
                                *a += w1 * g1.to_f64_s();
                                *a += w2 * g2.to_f64_s();
                                *a += w3 * g3.to_f64_s();
                            }
                        } else {
                            for r in 0..nb {
                                let w = wat(r);
                                let g = &grad_out.row(b, oc0 + r, i)[..w_out];
                                for (a, gv) in dst.iter_mut().zip(g) {
                                    *a += w * gv.to_f64_s();
                                }
                            }
                        }
                    }
                }
            }
            oc0 += nb;
        }
        for (dst, v) in plane.iter_mut().zip(&acc) {
            *dst = T::from_f64_s(*v);
        }
    });

    Ok(ConvGrads { grad_x, grad_w, grad_b })
}
