//! Network training: soft Dice loss over the eight output classes, cyclic
//! cosine learning rate, minibatch sampling with rotation augmentation, and
//! the SGD loop that captures a model snapshot before every learning-rate
//! reset.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{build, receptive_field, Model, SegNetConfig};
use crate::rng::{self, Prng};
use crate::scalar::Scalar;
use crate::snapshot::ModelSnapshot;
use crate::tensor::Tensor;
use crate::volume::{CineStudy, NUM_LABELS};

/// The printed form of the overlap coefficient has no factor 2 in the
/// numerator, so a perfect prediction scores 0.5; `Factor2` restores the
/// conventional Dice formulation with maximum 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DiceVariant {
    AsPrinted,
    Factor2,
}

impl DiceVariant {
    #[inline]
    fn factor(self) -> f64 {
        match self {
            DiceVariant::AsPrinted => 1.0,
            DiceVariant::Factor2 => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Iterations per learning-rate cycle; must divide `total_iters`.
    pub cycle_len: u64,
    /// Learning rate at the start of each cycle.
    pub alpha0: f64,
    pub batch_size: usize,
    /// Side of the square sample window taken from each slice.
    pub patch: usize,
    /// Side after reflect padding; must equal `patch + receptive_field - 1`.
    pub pad_to: usize,
    pub weight_decay: f64,
    /// SGD momentum; 0 is plain stochastic gradient descent.
    pub momentum: f64,
    /// How many trailing snapshots the run returns.
    pub snapshots_kept: usize,
    pub rng_seed: u64,
    pub dice_variant: DiceVariant,
    /// Emit one `iter,lr,loss` log line every this many iterations.
    pub log_interval: u64,
}

impl TrainConfig {
    /// The published training protocol: 150k iterations, cycle length 10k,
    /// initial rate 0.2, batches of four 151x151 samples padded to 281x281.
    pub fn paper_default(rng_seed: u64) -> Self {
        TrainConfig {
            total_iters: 150_000,
            cycle_len: 10_000,
            alpha0: 0.2,
            batch_size: 4,
            patch: 151,
            pad_to: 281,
            weight_decay: 5e-4,
            momentum: 0.0,
            snapshots_kept: 6,
            rng_seed,
            dice_variant: DiceVariant::AsPrinted,
            log_interval: 100,
        }
    }

    /// Re-derives `pad_to` for a new patch size under the given network.
    pub fn set_patch(&mut self, patch: usize, net: &SegNetConfig) {
        self.patch = patch;
        self.pad_to = patch + net.receptive_field() - 1;
    }

    pub fn validate(&self, net: &SegNetConfig) -> Result<()> {
        let rf = receptive_field(net);
        if self.pad_to != self.patch + rf - 1 {
            return Err(Error::Invalid(format!(
                "pad_to must be patch + receptive_field - 1 = {}, got {}",
                self.patch + rf - 1,
                self.pad_to
            )));
        }
        if self.cycle_len == 0 || self.total_iters % self.cycle_len != 0 {
            return Err(Error::Invalid(format!(
                "cycle length {} must divide total iterations {}",
                self.cycle_len, self.total_iters
            )));
        }
        if self.batch_size == 0 || self.patch == 0 {
            return Err(Error::Invalid("batch size and patch must be >= 1".into()));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::Invalid("alpha0 must be > 0".into()));
        }
        if self.snapshots_kept == 0 {
            return Err(Error::Invalid("snapshots_kept must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Learning rate at iteration `t >= 1`:
/// `alpha0/2 * (cos(pi * mod(t-1, M) / M) + 1)`.
pub fn cyclic_lr(t: u64, alpha0: f64, cycle_len: u64) -> f64 {
    assert!(t >= 1, "iterations are 1-based");
    assert!(cycle_len >= 1);
    let phase = ((t - 1) % cycle_len) as f64 / cycle_len as f64;
    alpha0 / 2.0 * ((std::f64::consts::PI * phase).cos() + 1.0)
}

/// Iterations at which snapshots are returned: every multiple of the cycle
/// length, truncated to the trailing `kept`.
pub fn snapshot_iterations(total_iters: u64, cycle_len: u64, kept: usize) -> Vec<u64> {
    let all: Vec<u64> = (1..=total_iters / cycle_len).map(|i| i * cycle_len).collect();
    let skip = all.len().saturating_sub(kept);
    all[skip..].to_vec()
}

/// Soft Dice of one class: `sum(R*A) / (sum(R) + sum(A))`, with the
/// `Factor2` variant doubling the numerator. An empty class (zero
/// denominator) contributes 0 instead of dividing by zero.
pub fn soft_dice<T: Scalar>(probs: &[T], reference: &[T], variant: DiceVariant) -> f64 {
    assert_eq!(probs.len(), reference.len(), "soft_dice shape mismatch");
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, r) in probs.iter().zip(reference) {
        let a = a.to_f64_s();
        let r = r.to_f64_s();
        num += r * a;
        den += r + a;
    }
    if den == 0.0 {
        0.0
    } else {
        variant.factor() * num / den
    }
}

/// One-hot reference tensor `[batch, 8, h, w]` matching the network output
/// channels: ED classes 0-3, ES classes 4-7, (BG, RV, Myo, LV) within each
/// phase.
#[derive(Debug, Clone)]
pub struct ReferenceBatch<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> ReferenceBatch<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.channels() != 2 * NUM_LABELS {
            return Err(Error::ShapeMismatch(format!(
                "reference batch needs 8 channels, got {}",
                tensor.channels()
            )));
        }
        let plane = tensor.rows() * tensor.cols();
        for b in 0..tensor.batch() {
            for pos in 0..plane {
                for group in [0..NUM_LABELS, NUM_LABELS..2 * NUM_LABELS] {
                    let mut ones = 0usize;
                    for c in group {
                        let v = tensor.plane(b, c)[pos].to_f64_s();
                        if v == 1.0 {
                            ones += 1;
                        } else if v != 0.0 {
                            return Err(Error::Invalid(
                                "reference batch must be binary".into(),
                            ));
                        }
                    }
                    if ones != 1 {
                        return Err(Error::Invalid(
                            "reference batch must be one-hot per phase group".into(),
                        ));
                    }
                }
            }
        }
        Ok(ReferenceBatch { tensor })
    }

    #[inline]
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }
}

/// Mean soft Dice over the eight classes (pooled over the batch), as a loss:
/// `1 - mean(dice_c)`.
pub fn dice_loss<T: Scalar>(
    probs: &Tensor<T>,
    refs: &ReferenceBatch<T>,
    variant: DiceVariant,
) -> f64 {
    let r = refs.tensor();
    assert_eq!(probs.shape(), r.shape(), "dice_loss shape mismatch");
    let channels = probs.channels();
    let mut total = 0.0f64;
    for c in 0..channels {
        let (num, den) = class_sums(probs, r, c);
        if den != 0.0 {
            total += variant.factor() * num / den;
        }
    }
    1.0 - total / channels as f64
}

/// Gradient of [`dice_loss`] with respect to the probabilities.
pub fn dice_loss_backward<T: Scalar>(
    probs: &Tensor<T>,
    refs: &ReferenceBatch<T>,
    variant: DiceVariant,
) -> Tensor<T> {
    let r = refs.tensor();
    assert_eq!(probs.shape(), r.shape(), "dice_loss shape mismatch");
    let channels = probs.channels();
    let f = variant.factor();
    let mut grad = Tensor::zeros(probs.shape());
    for c in 0..channels {
        let (num, den) = class_sums(probs, r, c);
        if den == 0.0 {
            continue;
        }
        let scale = -f / (channels as f64 * den * den);
        for b in 0..probs.batch() {
            let rs = r.plane(b, c);
            let dst = grad.plane_mut(b, c);
            for (g, rv) in dst.iter_mut().zip(rs) {
                // d(num)/dA = R, d(den)/dA = 1
                *g = T::from_f64_s(scale * (rv.to_f64_s() * den - num));
            }
        }
    }
    grad
}

fn class_sums<T: Scalar>(probs: &Tensor<T>, refs: &Tensor<T>, c: usize) -> (f64, f64) {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for b in 0..probs.batch() {
        for (a, r) in probs.plane(b, c).iter().zip(refs.plane(b, c)) {
            let a = a.to_f64_s();
            let r = r.to_f64_s();
            num += r * a;
            den += r + a;
        }
    }
    (num, den)
}

/// Index into a length-`n` axis with reflection (edge not repeated),
/// folding as often as needed.
#[inline]
pub(crate) fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Reflect-pads a `rows x cols` slice by `pad` on every side.
pub(crate) fn reflect_pad<T: Copy>(src: &[T], rows: usize, cols: usize, pad: usize) -> Vec<T> {
    let (orows, ocols) = (rows + 2 * pad, cols + 2 * pad);
    let mut out = Vec::with_capacity(orows * ocols);
    for i in 0..orows {
        let si = reflect_index(i as isize - pad as isize, rows);
        for j in 0..ocols {
            let sj = reflect_index(j as isize - pad as isize, cols);
            out.push(src[si * cols + sj]);
        }
    }
    out
}

/// Rotates a square `n x n` buffer by `k * 90` degrees counter-clockwise.
pub(crate) fn rotate_square<T: Copy>(src: &[T], n: usize, k: usize) -> Vec<T> {
    let mut cur = src.to_vec();
    for _ in 0..(k % 4) {
        let mut next = vec![cur[0]; n * n];
        for i in 0..n {
            for j in 0..n {
                next[i * n + j] = cur[j * n + (n - 1 - i)];
            }
        }
        cur = next;
    }
    cur
}

/// Zero-extends a slice symmetrically so both axes reach at least `target`.
fn zero_extend<T: Scalar>(
    src: &[T],
    rows: usize,
    cols: usize,
    target: usize,
) -> (Vec<T>, usize, usize) {
    let orows = rows.max(target);
    let ocols = cols.max(target);
    if orows == rows && ocols == cols {
        return (src.to_vec(), rows, cols);
    }
    let top = (orows - rows) / 2;
    let left = (ocols - cols) / 2;
    let mut out = vec![T::zero(); orows * ocols];
    for i in 0..rows {
        out[(i + top) * ocols + left..(i + top) * ocols + left + cols]
            .copy_from_slice(&src[i * cols..(i + 1) * cols]);
    }
    (out, orows, ocols)
}

fn zero_extend_labels(
    src: &[u8],
    rows: usize,
    cols: usize,
    target: usize,
) -> (Vec<u8>, usize, usize) {
    let orows = rows.max(target);
    let ocols = cols.max(target);
    if orows == rows && ocols == cols {
        return (src.to_vec(), rows, cols);
    }
    let top = (orows - rows) / 2;
    let left = (ocols - cols) / 2;
    let mut out = vec![0u8; orows * ocols];
    for i in 0..rows {
        out[(i + top) * ocols + left..(i + top) * ocols + left + cols]
            .copy_from_slice(&src[i * cols..(i + 1) * cols]);
    }
    (out, orows, ocols)
}

/// Draws one training minibatch.
///
/// For each sample: pick a (study, slice) pair uniformly, crop an aligned
/// `patch x patch` window from the ED and ES slices (slices smaller than the
/// patch are symmetrically zero-extended first), rotate image and one-hot
/// reference together by a random multiple of 90 degrees, then reflect-pad
/// the two-channel image to `pad_to`.
///
/// Studies must be preprocessed (resampled and normalized) and carry
/// reference labels.
pub fn sample_minibatch<T: Scalar>(
    studies: &[CineStudy<T>],
    cfg: &TrainConfig,
    rng: &mut Prng,
) -> Result<(Tensor<T>, ReferenceBatch<T>)> {
    if studies.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let patch = cfg.patch;
    let pad = (cfg.pad_to - patch) / 2;
    let mut input = Tensor::zeros([cfg.batch_size, 2, cfg.pad_to, cfg.pad_to]);
    let mut refs = Tensor::zeros([cfg.batch_size, 2 * NUM_LABELS, patch, patch]);

    for b in 0..cfg.batch_size {
        let study = &studies[rng.gen_range(0..studies.len())];
        let (labels_ed, labels_es) = study.reference_labels.as_ref().ok_or_else(|| {
            Error::Invalid(format!("study {} has no reference labels", study.patient_id))
        })?;
        if study.ed.dims() != study.es.dims() {
            return Err(Error::Invalid(format!(
                "study {}: ED and ES in-plane shapes differ after preprocessing",
                study.patient_id
            )));
        }
        let z = rng.gen_range(0..study.ed.slices());
        let (rows, cols) = (study.ed.rows(), study.ed.cols());

        let (ed, erows, ecols) = zero_extend(study.ed.slice(z), rows, cols, patch);
        let (es, _, _) = zero_extend(study.es.slice(z), rows, cols, patch);
        let (led, _, _) = zero_extend_labels(labels_ed.slice(z), rows, cols, patch);
        let (les, _, _) = zero_extend_labels(labels_es.slice(z), rows, cols, patch);

        let row0 = rng.gen_range(0..=erows - patch);
        let col0 = rng.gen_range(0..=ecols - patch);
        let k = rng.gen_range(0..4usize);

        let crop = |buf: &[T]| -> Vec<T> {
            let mut out = Vec::with_capacity(patch * patch);
            for i in 0..patch {
                let start = (row0 + i) * ecols + col0;
                out.extend_from_slice(&buf[start..start + patch]);
            }
            out
        };
        let crop_labels = |buf: &[u8]| -> Vec<u8> {
            let mut out = Vec::with_capacity(patch * patch);
            for i in 0..patch {
                let start = (row0 + i) * ecols + col0;
                out.extend_from_slice(&buf[start..start + patch]);
            }
            out
        };

        let ed_patch = rotate_square(&crop(&ed), patch, k);
        let es_patch = rotate_square(&crop(&es), patch, k);
        let led_patch = rotate_square(&crop_labels(&led), patch, k);
        let les_patch = rotate_square(&crop_labels(&les), patch, k);

        input.plane_mut(b, 0).copy_from_slice(&reflect_pad(&ed_patch, patch, patch, pad));
        input.plane_mut(b, 1).copy_from_slice(&reflect_pad(&es_patch, patch, patch, pad));

        for (pos, (&lv_ed, &lv_es)) in led_patch.iter().zip(&les_patch).enumerate() {
            refs.plane_mut(b, lv_ed as usize)[pos] = T::one();
            refs.plane_mut(b, NUM_LABELS + lv_es as usize)[pos] = T::one();
        }
    }
    Ok((input, ReferenceBatch { tensor: refs }))
}

/// Runs the full training loop and returns the trailing snapshots.
///
/// A snapshot is captured at every iteration `t` with `t % cycle_len == 0`,
/// i.e. immediately before each learning-rate reset; the final
/// `snapshots_kept` of them are returned. Progress is logged as
/// `iter,lr,loss` CSV lines to `log` every `log_interval` iterations.
pub fn train<T: Scalar>(
    studies: &[CineStudy<T>],
    net_config: &SegNetConfig,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<ModelSnapshot<T>>> {
    cfg.validate(net_config)?;
    if studies.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let mut model: Model<T> = build(net_config)?;
    let mut velocity = model.zero_grads();
    let mut rng = rng::seeded(cfg.rng_seed);
    let mut snapshots: Vec<ModelSnapshot<T>> = Vec::new();

    if let Some(log) = log.as_deref_mut() {
        writeln!(log, "iter,lr,loss").map_err(log_err)?;
    }

    for t in 1..=cfg.total_iters {
        let lr = cyclic_lr(t, cfg.alpha0, cfg.cycle_len);
        let (input, refs) = sample_minibatch(studies, cfg, &mut rng)?;
        let (probs, cache) = model.forward_train(&input)?;
        let loss = dice_loss(&probs, &refs, cfg.dice_variant);
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let grad_probs = dice_loss_backward(&probs, &refs, cfg.dice_variant);
        let (grads, _) = model.backward(&cache, &grad_probs)?;
        model.apply_sgd_momentum(&grads, &mut velocity, lr, cfg.weight_decay, cfg.momentum);

        if let Some(log) = log.as_deref_mut() {
            if t % cfg.log_interval == 0 || t == 1 || t == cfg.total_iters {
                writeln!(log, "{t},{lr},{loss}").map_err(log_err)?;
            }
        }
        if t % cfg.cycle_len == 0 {
            snapshots.push(ModelSnapshot { iteration: t, model: model.clone() });
            if snapshots.len() > cfg.snapshots_kept {
                snapshots.remove(0);
            }
        }
    }
    Ok(snapshots)
}

fn log_err(e: std::io::Error) -> Error {
    Error::Io { path: "<training log>".into(), source: e }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_lr_hits_the_published_anchor_points() {
        assert!((cyclic_lr(1, 0.2, 10_000) - 0.2).abs() < 1e-12);
        assert!((cyclic_lr(5_001, 0.2, 10_000) - 0.1).abs() < 1e-12);
        assert!((cyclic_lr(10_001, 0.2, 10_000) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn cyclic_lr_is_periodic_and_non_increasing_within_a_cycle() {
        let m = 40;
        let mut prev = f64::INFINITY;
        for t in 1..=m {
            let lr = cyclic_lr(t, 0.2, m);
            assert!(lr <= prev + 1e-15);
            assert!((cyclic_lr(t + m, 0.2, m) - lr).abs() < 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn snapshot_schedule_matches_paper_and_desk_constants() {
        assert_eq!(
            snapshot_iterations(150_000, 10_000, 6),
            vec![100_000, 110_000, 120_000, 130_000, 140_000, 150_000]
        );
        assert_eq!(snapshot_iterations(600, 100, 6), vec![100, 200, 300, 400, 500, 600]);
        assert_eq!(snapshot_iterations(30, 10, 3), vec![10, 20, 30]);
    }

    #[test]
    fn soft_dice_perfect_prediction_is_exactly_half() {
        let r: Vec<f32> = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let d = soft_dice(&r, &r, DiceVariant::AsPrinted);
        assert_eq!(d, 0.5);
        assert_eq!(soft_dice(&r, &r, DiceVariant::Factor2), 1.0);
    }

    #[test]
    fn soft_dice_disjoint_supports_is_zero() {
        let a: Vec<f32> = vec![0.0, 0.0, 1.0, 1.0];
        let r: Vec<f32> = vec![1.0, 1.0, 0.0, 0.0];
        assert_eq!(soft_dice(&a, &r, DiceVariant::AsPrinted), 0.0);
    }

    #[test]
    fn soft_dice_half_coverage_example() {
        // N voxels, R = 1 on half, A = 0.5 everywhere:
        // (0.5 * N/2) / (N/2 + 0.5 * N) = 0.25
        let n = 16;
        let r: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
        let a = vec![0.5f64; n];
        let d = soft_dice(&a, &r, DiceVariant::AsPrinted);
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn soft_dice_empty_class_contributes_zero() {
        let z = vec![0.0f32; 8];
        assert_eq!(soft_dice(&z, &z, DiceVariant::AsPrinted), 0.0);
    }

    fn one_hot_refs(labels: &[u8], h: usize, w: usize) -> ReferenceBatch<f64> {
        let mut t = Tensor::<f64>::zeros([1, 8, h, w]);
        for (pos, &l) in labels.iter().enumerate() {
            t.plane_mut(0, l as usize)[pos] = 1.0;
            t.plane_mut(0, 4 + l as usize)[pos] = 1.0;
        }
        ReferenceBatch::new(t).unwrap()
    }

    #[test]
    fn perfect_one_hot_prediction_loses_exactly_half() {
        // All eight classes present, prediction equals reference.
        let labels: Vec<u8> = (0..16).map(|i| (i % 4) as u8).collect();
        let refs = one_hot_refs(&labels, 4, 4);
        let loss = dice_loss(refs.tensor(), &refs, DiceVariant::AsPrinted);
        assert_eq!(loss, 0.5);
        assert_eq!(dice_loss(refs.tensor(), &refs, DiceVariant::Factor2), 0.0);
    }

    #[test]
    fn all_background_degenerate_case() {
        let labels = vec![0u8; 9];
        let refs = one_hot_refs(&labels, 3, 3);
        // Prediction also all background: BG classes contribute 0.5 each,
        // the six empty classes contribute 0.
        let loss = dice_loss(refs.tensor(), &refs, DiceVariant::AsPrinted);
        assert!((loss - (1.0 - 2.0 * 0.5 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn reference_batch_rejects_non_one_hot() {
        let t = Tensor::<f32>::zeros([1, 8, 2, 2]);
        assert!(ReferenceBatch::new(t).is_err());
    }

    #[test]
    fn reflect_index_folds_correctly() {
        // n = 4: ... 2 1 | 0 1 2 3 | 2 1 0 1 ...
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(-2, 4), 2);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(5, 4), 1);
        assert_eq!(reflect_index(6, 4), 0);
        assert_eq!(reflect_index(7, 4), 1); // second fold
        assert_eq!(reflect_index(0, 1), 0);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    #[test]
    fn rotation_by_four_quarters_is_identity() {
        let src: Vec<u8> = (0..25).collect();
        assert_eq!(rotate_square(&src, 5, 4), src);
        let once = rotate_square(&src, 5, 1);
        // CCW: top-right corner moves to top-left.
        assert_eq!(once[0], 4);
        let twice = rotate_square(&src, 5, 2);
        assert_eq!(twice[0], 24);
    }
}
