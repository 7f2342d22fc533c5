//! Two-stage cardiac cine-MR analysis pipeline.
//!
//! Stage one segments the left ventricle, right ventricle and myocardium in
//! paired end-diastole/end-systole short-axis slices with a dilated
//! fully-convolutional network trained on a soft Dice loss under a cyclic
//! learning-rate schedule; the models captured at the schedule minima form a
//! snapshot ensemble. Stage two turns the segmentations into volumetric
//! features and classifies each patient into one of five disease categories
//! with a Random Forest, reporting an entropy-based uncertainty.
//!
//! Numerical kernels are generic over the [`Scalar`] element type; the
//! pipeline runs in `f32` (see [`Real`]) and the gradient-check tests run the
//! identical code in `f64`.

pub mod error;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub mod volume;
pub mod study_io;
pub mod preprocess;

pub mod nn;
pub mod net;
pub mod snapshot;
pub mod train;
pub mod infer;

pub mod metrics;
pub mod features;
pub mod forest;
pub mod diagnosis;
pub mod phantom;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Element type of the production pipeline and of all on-disk rasters.
pub type Real = f32;
/// Pipeline-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by the finite-difference test suites.
pub type Tensor64 = Tensor<f64>;
/// Pipeline-precision volume.
pub type CineVolume32 = volume::CineVolume<f32>;
/// Pipeline-precision study.
pub type CineStudy32 = volume::CineStudy<f32>;
/// Pipeline-precision network.
pub type Model32 = net::Model<f32>;
