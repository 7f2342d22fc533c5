//! Network layers: dilated valid convolution, batch normalization, ReLU and
//! grouped softmax, each with a forward pass and an analytic backward pass,
//! plus the SGD parameter update.
//!
//! All reductions accumulate in `f64` before casting back to the element
//! type, and every per-element reduction runs in a fixed order, so results
//! are bitwise identical for any worker count.

mod activation;
mod batchnorm;
mod conv;
mod softmax;
mod sgd;

pub use activation::{relu, relu_backward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, BatchNormParams};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayerParams};
pub use softmax::{grouped_softmax, grouped_softmax_backward};
pub use sgd::{sgd_step, sgd_step_momentum};
