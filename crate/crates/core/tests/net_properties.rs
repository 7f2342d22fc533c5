//! Structural properties of the assembled network.

use cineseg_core::net::{build, SegNetConfig};
use cineseg_core::rng::{normal, seeded};
use cineseg_core::tensor::Tensor;
use cineseg_core::train::{dice_loss_backward, DiceVariant, ReferenceBatch};

fn small_config(seed: u64) -> SegNetConfig {
    SegNetConfig {
        dilations: vec![1, 2],
        hidden_width: 5,
        in_channels: 2,
        out_channels: 8,
        init_seed: seed,
    }
}

fn rand_input(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal(&mut rng) as f32).collect()).unwrap()
}

#[test]
fn receptive_field_sized_input_yields_single_voxel() {
    let cfg = small_config(1);
    let rf = cfg.receptive_field();
    let model = build::<f32>(&cfg).unwrap();
    let x = rand_input([1, 2, rf, rf], 2);
    let out = model.forward_eval(&x).unwrap();
    assert_eq!(out.shape(), [1, 8, 1, 1]);
}

#[test]
fn output_extent_is_input_minus_margin_for_many_sizes() {
    let cfg = small_config(3);
    let rf = cfg.receptive_field();
    let model = build::<f32>(&cfg).unwrap();
    for extra in [0usize, 1, 5, 12] {
        let x = rand_input([1, 2, rf + extra, rf + 2 * extra], 40 + extra as u64);
        let out = model.forward_eval(&x).unwrap();
        assert_eq!(out.shape(), [1, 8, 1 + extra, 1 + 2 * extra]);
    }
}

/// Translating the input translates the output identically (the network is
/// fully convolutional), in eval mode, bitwise on the overlapping region.
#[test]
fn forward_is_shift_equivariant() {
    let cfg = small_config(7);
    let rf = cfg.receptive_field(); // 7
    let model = build::<f32>(&cfg).unwrap();
    let (h, w) = (rf + 6, rf + 6);
    let big = rand_input([1, 2, h + 3, w + 2], 11);

    // Two crops of the same scene, offset by (dy, dx) = (3, 2).
    let crop = |dy: usize, dx: usize| {
        let mut t = Tensor::<f32>::zeros([1, 2, h, w]);
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    t.set(0, c, i, j, big.at(0, c, i + dy, j + dx));
                }
            }
        }
        t
    };
    let out_a = model.forward_eval(&crop(0, 0)).unwrap();
    let out_b = model.forward_eval(&crop(3, 2)).unwrap();
    let (oh, ow) = (out_a.rows(), out_a.cols());
    for c in 0..8 {
        for i in 0..oh - 3 {
            for j in 0..ow - 2 {
                assert_eq!(
                    out_a.at(0, c, i + 3, j + 2),
                    out_b.at(0, c, i, j),
                    "channel {c} at ({i},{j})"
                );
            }
        }
    }
}

/// The ED output group must depend on the ES input channel: the gradient of
/// an ED-only loss with respect to the ES channel is not identically zero.
#[test]
fn ed_outputs_depend_on_es_input() {
    let mut cfg = small_config(13);
    cfg.hidden_width = 6;
    let mut model = build::<f32>(&cfg).unwrap();
    let rf = cfg.receptive_field();
    let x = rand_input([1, 2, rf + 3, rf + 3], 17);
    let (probs, cache) = model.forward_train(&x).unwrap();

    // One-hot references for the ED group only; ES reference equals the ES
    // prediction's argmax so its gradient is not what we probe. Instead,
    // zero the ES-group loss gradient explicitly.
    let mut refs_t = Tensor::<f32>::zeros([1, 8, 4, 4]);
    for pos in 0..16 {
        refs_t.plane_mut(0, pos % 4)[pos] = 1.0;
        refs_t.plane_mut(0, 4)[pos] = 1.0;
    }
    let refs = ReferenceBatch::new(refs_t).unwrap();
    let mut grad_probs = dice_loss_backward(&probs, &refs, DiceVariant::AsPrinted);
    for c in 4..8 {
        for g in grad_probs.plane_mut(0, c) {
            *g = 0.0;
        }
    }
    let (_, grad_input) = model.backward(&cache, &grad_probs).unwrap();
    let es_grad_norm: f32 = grad_input.plane(0, 1).iter().map(|v| v.abs()).sum();
    assert!(es_grad_norm > 0.0, "ED loss has zero gradient into the ES channel");
}

#[test]
fn eval_forward_is_deterministic_and_does_not_mutate() {
    let cfg = small_config(23);
    let model = build::<f32>(&cfg).unwrap();
    let before = model.clone();
    let x = rand_input([2, 2, 9, 9], 29);
    let a = model.forward_eval(&x).unwrap();
    let b = model.forward_eval(&x).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(model, before);
}
