//! Throwaway probe for iteration cost at candidate desk-scale settings.

use cineseg_core::net::{build, SegNetConfig};
use cineseg_core::tensor::Tensor;
use cineseg_core::train::{dice_loss, dice_loss_backward, DiceVariant, ReferenceBatch};
use std::time::Instant;

fn probe(width: usize, patch: usize, batch: usize, iters: usize) {
    let mut cfg = SegNetConfig::paper_default(1);
    cfg.hidden_width = width;
    let pad = patch + cfg.receptive_field() - 1;
    let mut model = build::<f32>(&cfg).unwrap();
    let x = Tensor::<f32>::from_vec(
        [batch, 2, pad, pad],
        (0..batch * 2 * pad * pad).map(|i| (i % 97) as f32 / 97.0).collect(),
    )
    .unwrap();
    let mut refs_t = Tensor::<f32>::zeros([batch, 8, patch, patch]);
    for b in 0..batch {
        for pos in 0..patch * patch {
            refs_t.plane_mut(b, pos % 4)[pos] = 1.0;
            refs_t.plane_mut(b, 4 + pos % 4)[pos] = 1.0;
        }
    }
    let refs = ReferenceBatch::new(refs_t).unwrap();

    let t0 = Instant::now();
    for _ in 0..iters {
        let (probs, cache) = model.forward_train(&x).unwrap();
        let _loss = dice_loss(&probs, &refs, DiceVariant::AsPrinted);
        let grad = dice_loss_backward(&probs, &refs, DiceVariant::AsPrinted);
        let (grads, _) = model.backward(&cache, &grad).unwrap();
        model.apply_sgd(&grads, 0.1, 5e-4);
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("width={width} patch={patch} pad={pad} batch={batch}: {dt:.3} s/iter -> 600 iters = {:.0} s", dt * 600.0);
}

#[test]
#[ignore]
fn iteration_cost() {
    probe(8, 63, 4, 3);
    probe(8, 39, 4, 3);
    probe(12, 63, 4, 3);
    probe(16, 63, 4, 2);
    probe(16, 39, 4, 2);
    probe(32, 151, 4, 1);
}
