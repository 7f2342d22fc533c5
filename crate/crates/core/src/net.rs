//! The segmentation network.
//!
//! A stack of 3x3 convolution layers with increasing dilation (each followed
//! by batch normalization and ReLU) and a final 1x1 convolution producing
//! eight channels: four per-phase class scores for ED and four for ES, each
//! group normalized by its own softmax. With the default dilation schedule
//! `[1, 1, 2, 4, 8, 16, 32, 1]` the receptive field is 131x131 voxels.
//!
//! Convolutions are valid (unpadded), so the output shrinks by
//! `receptive_field - 1 = 130` voxels per spatial axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv2d_backward,
    conv2d_forward, grouped_softmax, grouped_softmax_backward, relu, relu_backward, sgd_step,
    BatchNormParams, ConvLayerParams,
};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel layout of the network output: ED probabilities first, then ES,
/// each ordered (BG, RV, Myo, LV) like the label values.
pub const ED_GROUP: [usize; 4] = [0, 1, 2, 3];
pub const ES_GROUP: [usize; 4] = [4, 5, 6, 7];

pub fn output_groups() -> Vec<Vec<usize>> {
    vec![ED_GROUP.to_vec(), ES_GROUP.to_vec()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegNetConfig {
    /// Dilation of each hidden 3x3 layer.
    pub dilations: Vec<usize>,
    /// Channels per hidden layer.
    pub hidden_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub init_seed: u64,
}

impl SegNetConfig {
    /// The production architecture: receptive field 131x131, 8 hidden
    /// layers of 32 channels, paired ED/ES input, 8 output channels.
    pub fn paper_default(init_seed: u64) -> Self {
        SegNetConfig {
            dilations: vec![1, 1, 2, 4, 8, 16, 32, 1],
            hidden_width: 32,
            in_channels: 2,
            out_channels: 8,
            init_seed,
        }
    }

    /// `1 + 2 * sum(dilations)` for 3x3 hidden kernels; the 1x1 output
    /// layer contributes nothing.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self)
    }

    /// Total input shrink per spatial axis.
    pub fn margin(&self) -> usize {
        self.receptive_field() - 1
    }

    fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() {
            return Err(Error::Invalid("network needs at least one hidden layer".into()));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Invalid("dilations must be >= 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Invalid("hidden width must be >= 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Invalid("input channels must be >= 1".into()));
        }
        if self.out_channels != 8 {
            return Err(Error::Invalid(format!(
                "output layer must have 8 channels (4 per phase), got {}",
                self.out_channels
            )));
        }
        Ok(())
    }
}

pub fn receptive_field(config: &SegNetConfig) -> usize {
    1 + 2 * config.dilations.iter().sum::<usize>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    pub conv: ConvLayerParams<T>,
    pub bn: BatchNormParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: SegNetConfig,
    pub hidden: Vec<HiddenLayer<T>>,
    pub output: ConvLayerParams<T>,
}

/// Builds a freshly initialized model: seeded He-normal conv weights
/// (std `sqrt(2/fan_in)`), zero biases, identity batch norm with running
/// stats (0, 1).
pub fn build<T: Scalar>(config: &SegNetConfig) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = rng::seeded(config.init_seed);
    let mut hidden = Vec::with_capacity(config.dilations.len());
    let mut in_ch = config.in_channels;
    for &dilation in &config.dilations {
        let conv = init_conv::<T>(&mut rng, config.hidden_width, in_ch, 3, dilation)?;
        hidden.push(HiddenLayer { conv, bn: BatchNormParams::new(config.hidden_width) });
        in_ch = config.hidden_width;
    }
    let output = init_conv::<T>(&mut rng, config.out_channels, in_ch, 1, 1)?;
    Ok(Model { config: config.clone(), hidden, output })
}

fn init_conv<T: Scalar>(
    rng: &mut impl Rng,
    out_ch: usize,
    in_ch: usize,
    k: usize,
    dilation: usize,
) -> Result<ConvLayerParams<T>> {
    let fan_in = in_ch * k * k;
    let std = (2.0 / fan_in as f64).sqrt();
    let weights = (0..out_ch * fan_in)
        .map(|_| T::from_f64_s(rng::normal(rng) * std))
        .collect();
    ConvLayerParams::new(out_ch, in_ch, k, dilation, weights, vec![T::zero(); out_ch])
}

/// Activations recorded by a training-mode forward pass, consumed by
/// [`backward`].
pub struct ForwardCache<T> {
    /// Input to each hidden conv, plus the input to the output conv.
    conv_inputs: Vec<Tensor<T>>,
    /// Hidden conv outputs (batch-norm inputs).
    conv_outs: Vec<Tensor<T>>,
    /// Batch-norm outputs (ReLU inputs).
    bn_outs: Vec<Tensor<T>>,
    probs: Tensor<T>,
}

/// Gradients for every trainable parameter, mirroring the model layout.
pub struct ModelGrads<T> {
    pub hidden: Vec<LayerGrads<T>>,
    pub out_w: Vec<T>,
    pub out_b: Vec<T>,
}

pub struct LayerGrads<T> {
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    pub bn_scale: Vec<T>,
    pub bn_shift: Vec<T>,
}

impl<T: Scalar> Model<T> {
    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels,
                x.channels()
            )));
        }
        let rf = self.config.receptive_field();
        if x.rows() < rf || x.cols() < rf {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} is smaller than the {rf}x{rf} receptive field",
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Inference forward pass; batch-norm uses running statistics and the
    /// model is not mutated.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.hidden {
            h = relu(&batchnorm_forward_eval(&conv2d_forward(&h, &layer.conv)?, &layer.bn)?);
        }
        let logits = conv2d_forward(&h, &self.output)?;
        grouped_softmax(&logits, &output_groups())
    }

    /// Training forward pass: batch-norm uses batch statistics and updates
    /// its running buffers; all intermediates are cached for [`backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let n = self.hidden.len();
        let mut conv_inputs = Vec::with_capacity(n + 1);
        let mut conv_outs = Vec::with_capacity(n);
        let mut bn_outs = Vec::with_capacity(n);

        let mut h = x.clone();
        for layer in self.hidden.iter_mut() {
            let conv_out = conv2d_forward(&h, &layer.conv)?;
            let bn_out = batchnorm_forward_train(&conv_out, &mut layer.bn)?;
            let act = relu(&bn_out);
            conv_inputs.push(h);
            conv_outs.push(conv_out);
            bn_outs.push(bn_out);
            h = act;
        }
        let logits = conv2d_forward(&h, &self.output)?;
        conv_inputs.push(h);
        let probs = grouped_softmax(&logits, &output_groups())?;
        let cache = ForwardCache { conv_inputs, conv_outs, bn_outs, probs: probs.clone() };
        Ok((probs, cache))
    }

    /// Backpropagates `grad_probs` (dLoss/dProbs) through the whole network.
    /// Returns parameter gradients and the gradient at the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_probs: &Tensor<T>,
    ) -> Result<(ModelGrads<T>, Tensor<T>)> {
        let n = self.hidden.len();
        let grad_logits = grouped_softmax_backward(&cache.probs, &output_groups(), grad_probs)?;
        let out_grads = conv2d_backward(&cache.conv_inputs[n], &self.output, &grad_logits)?;
        let mut grad = out_grads.grad_x;
        let mut hidden_grads: Vec<LayerGrads<T>> = Vec::with_capacity(n);
        for l in (0..n).rev() {
            let layer = &self.hidden[l];
            let grad_bn_out = relu_backward(&cache.bn_outs[l], &grad);
            let (grad_conv_out, bn_scale, bn_shift) =
                batchnorm_backward(&cache.conv_outs[l], &layer.bn, &grad_bn_out)?;
            let conv_grads = conv2d_backward(&cache.conv_inputs[l], &layer.conv, &grad_conv_out)?;
            hidden_grads.push(LayerGrads {
                conv_w: conv_grads.grad_w,
                conv_b: conv_grads.grad_b,
                bn_scale,
                bn_shift,
            });
            grad = conv_grads.grad_x;
        }
        hidden_grads.reverse();
        Ok((
            ModelGrads { hidden: hidden_grads, out_w: out_grads.grad_w, out_b: out_grads.grad_b },
            grad,
        ))
    }

    /// SGD update on every parameter. L2 decay applies to convolution
    /// weights and biases; batch-norm scale and shift are exempt.
    pub fn apply_sgd(&mut self, grads: &ModelGrads<T>, lr: f64, weight_decay: f64) {
        for (layer, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            sgd_step(&mut layer.conv.weights, &g.conv_w, lr, weight_decay);
            sgd_step(&mut layer.conv.bias, &g.conv_b, lr, weight_decay);
            sgd_step(&mut layer.bn.scale, &g.bn_scale, lr, 0.0);
            sgd_step(&mut layer.bn.shift, &g.bn_shift, lr, 0.0);
        }
        sgd_step(&mut self.output.weights, &grads.out_w, lr, weight_decay);
        sgd_step(&mut self.output.bias, &grads.out_b, lr, weight_decay);
    }

    /// SGD with momentum; `velocity` mirrors the parameter layout and is
    /// updated in place. `mu = 0` computes exactly [`Model::apply_sgd`].
    pub fn apply_sgd_momentum(
        &mut self,
        grads: &ModelGrads<T>,
        velocity: &mut ModelGrads<T>,
        lr: f64,
        weight_decay: f64,
        mu: f64,
    ) {
        use crate::nn::sgd_step_momentum;
        for ((layer, g), v) in
            self.hidden.iter_mut().zip(&grads.hidden).zip(velocity.hidden.iter_mut())
        {
            sgd_step_momentum(&mut layer.conv.weights, &g.conv_w, &mut v.conv_w, lr, weight_decay, mu);
            sgd_step_momentum(&mut layer.conv.bias, &g.conv_b, &mut v.conv_b, lr, weight_decay, mu);
            sgd_step_momentum(&mut layer.bn.scale, &g.bn_scale, &mut v.bn_scale, lr, 0.0, mu);
            sgd_step_momentum(&mut layer.bn.shift, &g.bn_shift, &mut v.bn_shift, lr, 0.0, mu);
        }
        sgd_step_momentum(&mut self.output.weights, &grads.out_w, &mut velocity.out_w, lr, weight_decay, mu);
        sgd_step_momentum(&mut self.output.bias, &grads.out_b, &mut velocity.out_b, lr, weight_decay, mu);
    }

    /// A zero-filled gradient/velocity buffer matching this model's layout.
    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            hidden: self
                .hidden
                .iter()
                .map(|l| LayerGrads {
                    conv_w: vec![T::zero(); l.conv.weights.len()],
                    conv_b: vec![T::zero(); l.conv.bias.len()],
                    bn_scale: vec![T::zero(); l.bn.scale.len()],
                    bn_shift: vec![T::zero(); l.bn.shift.len()],
                })
                .collect(),
            out_w: vec![T::zero(); self.output.weights.len()],
            out_b: vec![T::zero(); self.output.bias.len()],
        }
    }

    /// Number of layers with trainable weights (hidden convs + output).
    pub fn weighted_layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            hidden: self
                .hidden
                .iter()
                .map(|l| HiddenLayer { conv: l.conv.cast(), bn: l.bn.cast() })
                .collect(),
            output: self.output.cast(),
        }
    }
}
