//! Finite-difference oracle for every backward pass.
//!
//! Each layer's analytic gradient is compared against central finite
//! differences of its own forward pass, computed in `f64` end to end. The
//! checks sweep 100 seeds per layer kind on small random tensors.

use cineseg_core::nn::{
    batchnorm_backward, batchnorm_forward_train, conv2d_backward, conv2d_forward,
    grouped_softmax, grouped_softmax_backward, relu, relu_backward, BatchNormParams,
    ConvLayerParams,
};
use cineseg_core::rng::{normal, seeded};
use cineseg_core::tensor::Tensor;
use cineseg_core::train::{dice_loss, dice_loss_backward, DiceVariant, ReferenceBatch};
use cineseg_core::Tensor64;

const REL_TOL: f64 = 1e-3;
const STEP: f64 = 1e-5;

fn rand_tensor(shape: [usize; 4], rng: &mut cineseg_core::rng::Prng) -> Tensor64 {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal(rng)).collect()).unwrap()
}

/// Central finite difference of `f` with respect to `x[i]`.
fn central_diff(x: &Tensor64, i: usize, f: &mut dyn FnMut(&Tensor64) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += STEP;
    let mut minus = x.clone();
    minus.data_mut()[i] -= STEP;
    (f(&plus) - f(&minus)) / (2.0 * STEP)
}

/// Relative-error agreement with an absolute floor for near-zero entries.
fn agree(analytic: f64, numeric: f64) -> bool {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-7 {
        return (analytic - numeric).abs() < 1e-6;
    }
    (analytic - numeric).abs() / denom < REL_TOL
}

/// A scalar objective for layer outputs: weighted sum with fixed weights so
/// the gradient of the objective w.r.t. the output is deterministic.
fn probe_weights(n: usize, rng: &mut cineseg_core::rng::Prng) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn weighted_sum(t: &Tensor64, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

#[test]
fn conv_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = seeded(seed);
        let dilation = 1 + (seed % 2) as usize; // alternate dilation 1 and 2
        let x = rand_tensor([1, 1, 6, 6], &mut rng);
        let p = ConvLayerParams::<f64>::new(
            1,
            1,
            3,
            dilation,
            (0..9).map(|_| normal(&mut rng)).collect(),
            vec![normal(&mut rng)],
        )
        .unwrap();
        let out_n = {
            let m = p.margin();
            (6 - m) * (6 - m)
        };
        let w = probe_weights(out_n, &mut rng);

        let grad_out_data: Vec<f64> = w.clone();
        let grad_out =
            Tensor::from_vec([1, 1, 6 - p.margin(), 6 - p.margin()], grad_out_data).unwrap();
        let grads = conv2d_backward(&x, &p, &grad_out).unwrap();

        // d objective / d x
        for i in 0..x.len() {
            let num = central_diff(&x, i, &mut |xx| {
                weighted_sum(&conv2d_forward(xx, &p).unwrap(), &w)
            });
            assert!(
                agree(grads.grad_x.data()[i], num),
                "seed {seed} d={dilation} grad_x[{i}]: {} vs {num}",
                grads.grad_x.data()[i]
            );
        }
        // d objective / d weights and bias
        for wi in 0..p.weights.len() {
            let mut pp = p.clone();
            pp.weights[wi] += STEP;
            let up = weighted_sum(&conv2d_forward(&x, &pp).unwrap(), &w);
            pp.weights[wi] -= 2.0 * STEP;
            let down = weighted_sum(&conv2d_forward(&x, &pp).unwrap(), &w);
            let num = (up - down) / (2.0 * STEP);
            assert!(agree(grads.grad_w[wi], num), "seed {seed} grad_w[{wi}]");
        }
        let mut pp = p.clone();
        pp.bias[0] += STEP;
        let up = weighted_sum(&conv2d_forward(&x, &pp).unwrap(), &w);
        pp.bias[0] -= 2.0 * STEP;
        let down = weighted_sum(&conv2d_forward(&x, &pp).unwrap(), &w);
        assert!(agree(grads.grad_b[0], (up - down) / (2.0 * STEP)), "seed {seed} grad_b");
    }
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = seeded(1000 + seed);
        let x = rand_tensor([2, 4, 5, 5], &mut rng);
        let mut p = BatchNormParams::<f64>::new(4);
        for c in 0..4 {
            p.scale[c] = 1.0 + 0.3 * normal(&mut rng);
            p.shift[c] = 0.3 * normal(&mut rng);
        }
        let w = probe_weights(x.len(), &mut rng);
        let grad_out = Tensor::from_vec(x.shape(), w.clone()).unwrap();
        let (grad_x, grad_scale, grad_shift) = batchnorm_backward(&x, &p, &grad_out).unwrap();

        // Forward as a pure function: clone the params each evaluation so
        // running-stat updates cannot accumulate.
        let fwd = |xx: &Tensor64, pp: &BatchNormParams<f64>| {
            let mut pc = pp.clone();
            weighted_sum(&batchnorm_forward_train(xx, &mut pc).unwrap(), &w)
        };

        // Check a subset of input positions per seed to stay fast.
        for i in (seed as usize % 7..x.len()).step_by(17) {
            let num = central_diff(&x, i, &mut |xx| fwd(xx, &p));
            assert!(agree(grad_x.data()[i], num), "seed {seed} grad_x[{i}]");
        }
        for c in 0..4 {
            let mut pp = p.clone();
            pp.scale[c] += STEP;
            let up = fwd(&x, &pp);
            pp.scale[c] -= 2.0 * STEP;
            let down = fwd(&x, &pp);
            assert!(agree(grad_scale[c], (up - down) / (2.0 * STEP)), "seed {seed} scale[{c}]");

            let mut pp = p.clone();
            pp.shift[c] += STEP;
            let up = fwd(&x, &pp);
            pp.shift[c] -= 2.0 * STEP;
            let down = fwd(&x, &pp);
            assert!(agree(grad_shift[c], (up - down) / (2.0 * STEP)), "seed {seed} shift[{c}]");
        }
    }
}

#[test]
fn relu_gradient_matches_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = seeded(2000 + seed);
        let x = rand_tensor([1, 2, 4, 4], &mut rng);
        let w = probe_weights(x.len(), &mut rng);
        let grad_out = Tensor::from_vec(x.shape(), w.clone()).unwrap();
        let grad_x = relu_backward(&x, &grad_out);
        for i in 0..x.len() {
            // Skip inputs too close to the kink for finite differences.
            if x.data()[i].abs() < 10.0 * STEP {
                continue;
            }
            let num = central_diff(&x, i, &mut |xx| weighted_sum(&relu(xx), &w));
            assert!(agree(grad_x.data()[i], num), "seed {seed} relu grad[{i}]");
        }
    }
}

fn random_one_hot(
    shape: [usize; 4],
    rng: &mut cineseg_core::rng::Prng,
) -> ReferenceBatch<f64> {
    use rand::Rng;
    let mut t = Tensor::<f64>::zeros(shape);
    let plane = shape[2] * shape[3];
    for b in 0..shape[0] {
        for pos in 0..plane {
            let ed = rng.gen_range(0..4usize);
            let es = rng.gen_range(0..4usize);
            t.plane_mut(b, ed)[pos] = 1.0;
            t.plane_mut(b, 4 + es)[pos] = 1.0;
        }
    }
    ReferenceBatch::new(t).unwrap()
}

#[test]
fn dice_loss_gradient_matches_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = seeded(3000 + seed);
        let shape = [1, 8, 6, 6];
        // Probabilities in (0, 1): squash normals through a logistic.
        let n = shape.iter().product();
        let data: Vec<f64> =
            (0..n).map(|_| 1.0 / (1.0 + (-normal(&mut rng)).exp())).collect();
        let probs = Tensor::from_vec(shape, data).unwrap();
        let refs = random_one_hot(shape, &mut rng);
        let variant =
            if seed % 2 == 0 { DiceVariant::AsPrinted } else { DiceVariant::Factor2 };

        let grad = dice_loss_backward(&probs, &refs, variant);
        for i in (0..probs.len()).step_by(11) {
            let num =
                central_diff(&probs, i, &mut |pp| dice_loss(pp, &refs, variant));
            assert!(agree(grad.data()[i], num), "seed {seed} dice grad[{i}]");
        }
    }
}

#[test]
fn softmax_composed_with_dice_loss_matches_finite_differences() {
    let groups = vec![vec![0usize, 1, 2, 3], vec![4, 5, 6, 7]];
    for seed in 0..100u64 {
        let mut rng = seeded(4000 + seed);
        let shape = [1, 8, 4, 4];
        let logits = rand_tensor(shape, &mut rng);
        let refs = random_one_hot(shape, &mut rng);

        let probs = grouped_softmax(&logits, &groups).unwrap();
        let grad_probs = dice_loss_backward(&probs, &refs, DiceVariant::AsPrinted);
        let grad_logits = grouped_softmax_backward(&probs, &groups, &grad_probs).unwrap();

        let mut objective = |z: &Tensor64| {
            let p = grouped_softmax(z, &groups).unwrap();
            dice_loss(&p, &refs, DiceVariant::AsPrinted)
        };
        for i in (0..logits.len()).step_by(7) {
            let num = central_diff(&logits, i, &mut objective);
            assert!(
                agree(grad_logits.data()[i], num),
                "seed {seed} softmax+dice grad[{i}]: {} vs {num}",
                grad_logits.data()[i]
            );
        }
    }
}
