//! Scalar element type for tensors and image volumes.
//!
//! All numerical kernels are generic over [`Scalar`] so the same code runs
//! in `f32` (the pipeline default and the on-disk precision) and in `f64`
//! (used by the gradient-check tests). Reductions accumulate in `f64`
//! regardless of the element type.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    fn to_f64_s(self) -> f64;
    fn from_f64_s(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn to_f64_s(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64_s(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn to_f64_s(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64_s(v: f64) -> Self {
        v
    }
}
