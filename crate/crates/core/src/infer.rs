//! Ensemble inference: full-volume segmentation with snapshot-averaged
//! probabilities and largest-connected-component post-processing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{ED_GROUP, ES_GROUP};
use crate::scalar::Scalar;
use crate::snapshot::ModelSnapshot;
use crate::tensor::Tensor;
use crate::train::reflect_pad;
use crate::volume::{CineStudy, LabelMap, Phase, NUM_LABELS};

/// Per-phase class probabilities `[slices, 4, rows, cols]`.
#[derive(Debug, Clone)]
pub struct ProbabilityVolume<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> ProbabilityVolume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() * NUM_LABELS {
            return Err(Error::ShapeMismatch("probability volume length".into()));
        }
        Ok(ProbabilityVolume { dims, data })
    }

    /// `[slices, rows, cols]` of the underlying grid.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Raw values, C order `[slice, class, row, col]`.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, z: usize, class: usize, y: usize, x: usize) -> T {
        let [_, rows, cols] = [self.dims[0], self.dims[1], self.dims[2]];
        self.data[((z * NUM_LABELS + class) * rows + y) * cols + x]
    }

    /// Checks the class axis sums to 1 per voxel within `tol`.
    pub fn validate_sums(&self, tol: f64) -> Result<()> {
        let [ns, rows, cols] = self.dims;
        let plane = rows * cols;
        for z in 0..ns {
            for pos in 0..plane {
                let mut s = 0.0f64;
                for c in 0..NUM_LABELS {
                    s += self.data[(z * NUM_LABELS + c) * plane + pos].to_f64_s();
                }
                if (s - 1.0).abs() > tol {
                    return Err(Error::NonFinite("probability volume class sums"));
                }
            }
        }
        Ok(())
    }

    /// Per-voxel argmax; ties resolve to the lowest class index.
    pub fn argmax_labels(&self, spacing_mm: [f64; 3]) -> Result<LabelMap> {
        let [ns, rows, cols] = self.dims;
        let plane = rows * cols;
        let mut labels = vec![0u8; ns * plane];
        for z in 0..ns {
            for pos in 0..plane {
                let mut best = 0usize;
                let mut best_v = self.data[(z * NUM_LABELS) * plane + pos].to_f64_s();
                for c in 1..NUM_LABELS {
                    let v = self.data[(z * NUM_LABELS + c) * plane + pos].to_f64_s();
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                labels[z * plane + pos] = best as u8;
            }
        }
        LabelMap::new(self.dims, spacing_mm, labels)
    }
}

/// Arithmetic mean of probability volumes (accumulated in `f64`).
pub fn average_probs<T: Scalar>(maps: &[ProbabilityVolume<T>]) -> Result<ProbabilityVolume<T>> {
    let first = maps.first().ok_or(Error::EmptyInput("probability volumes"))?;
    if maps.iter().any(|m| m.dims != first.dims) {
        return Err(Error::ShapeMismatch("probability volumes differ in shape".into()));
    }
    let inv = 1.0 / maps.len() as f64;
    let mut out = vec![T::zero(); first.data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for m in maps {
            s += m.data[i].to_f64_s();
        }
        *o = T::from_f64_s(s * inv);
    }
    ProbabilityVolume::new(first.dims, out)
}

/// Segments one study with a snapshot ensemble and returns per-phase label
/// maps after post-processing, along with the averaged probability volumes.
///
/// The study must already be preprocessed (resampled and normalized). Every
/// aligned ED/ES slice pair is reflect-padded by half the network margin,
/// forwarded through each snapshot in inference mode, and the per-phase
/// probability maps are averaged over snapshots (in ascending iteration
/// order, so the result is independent of the caller's ordering) before the
/// voxel-wise argmax and the largest-component filter.
pub fn segment_study_with_probs<T: Scalar>(
    snapshots: &[ModelSnapshot<T>],
    study: &CineStudy<T>,
) -> Result<(LabelMap, LabelMap, ProbabilityVolume<T>, ProbabilityVolume<T>)> {
    if snapshots.is_empty() {
        return Err(Error::EmptyInput("snapshot ensemble"));
    }
    let config = &snapshots[0].model.config;
    for s in snapshots {
        if s.model.config.dilations != config.dilations
            || s.model.config.hidden_width != config.hidden_width
            || s.model.config.in_channels != config.in_channels
            || s.model.config.out_channels != config.out_channels
        {
            return Err(Error::Invalid(
                "snapshot ensemble mixes incompatible architectures".into(),
            ));
        }
    }
    if study.ed.dims() != study.es.dims() {
        return Err(Error::Invalid(format!(
            "study {}: ED and ES shapes differ after preprocessing",
            study.patient_id
        )));
    }

    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    order.sort_by_key(|&i| snapshots[i].iteration);

    let [ns, rows, cols] = study.ed.dims();
    let margin = config.margin();
    if margin % 2 != 0 {
        return Err(Error::Invalid("receptive field must be odd".into()));
    }
    let pad = margin / 2;
    let plane = rows * cols;

    // Slices are independent; tasks produce disjoint per-slice outputs.
    let slice_results: Vec<Result<(Vec<T>, Vec<T>)>> = (0..ns)
        .into_par_iter()
        .map(|z| {
            let ed_pad = reflect_pad(study.ed.slice(z), rows, cols, pad);
            let es_pad = reflect_pad(study.es.slice(z), rows, cols, pad);
            let side_r = rows + 2 * pad;
            let side_c = cols + 2 * pad;
            let mut input = Tensor::zeros([1, 2, side_r, side_c]);
            input.plane_mut(0, 0).copy_from_slice(&ed_pad);
            input.plane_mut(0, 1).copy_from_slice(&es_pad);

            let mut ed_acc = vec![0.0f64; NUM_LABELS * plane];
            let mut es_acc = vec![0.0f64; NUM_LABELS * plane];
            for &i in &order {
                let probs = snapshots[i].model.forward_eval(&input)?;
                debug_assert_eq!(probs.shape(), [1, 8, rows, cols]);
                for (c, &ch) in ED_GROUP.iter().enumerate() {
                    for (a, v) in ed_acc[c * plane..(c + 1) * plane]
                        .iter_mut()
                        .zip(probs.plane(0, ch))
                    {
                        *a += v.to_f64_s();
                    }
                }
                for (c, &ch) in ES_GROUP.iter().enumerate() {
                    for (a, v) in es_acc[c * plane..(c + 1) * plane]
                        .iter_mut()
                        .zip(probs.plane(0, ch))
                    {
                        *a += v.to_f64_s();
                    }
                }
            }
            let inv = 1.0 / snapshots.len() as f64;
            let ed: Vec<T> = ed_acc.iter().map(|&v| T::from_f64_s(v * inv)).collect();
            let es: Vec<T> = es_acc.iter().map(|&v| T::from_f64_s(v * inv)).collect();
            Ok((ed, es))
        })
        .collect();

    let mut ed_data = Vec::with_capacity(ns * NUM_LABELS * plane);
    let mut es_data = Vec::with_capacity(ns * NUM_LABELS * plane);
    for r in slice_results {
        let (ed, es) = r?;
        ed_data.extend_from_slice(&ed);
        es_data.extend_from_slice(&es);
    }
    let probs_ed = ProbabilityVolume::new([ns, rows, cols], ed_data)?;
    let probs_es = ProbabilityVolume::new([ns, rows, cols], es_data)?;

    let spacing = study.ed.spacing_mm();
    let labels_ed = postprocess_largest_cc(&probs_ed.argmax_labels(spacing)?)?;
    let labels_es = postprocess_largest_cc(&probs_es.argmax_labels(spacing)?)?;
    Ok((labels_ed, labels_es, probs_ed, probs_es))
}

/// [`segment_study_with_probs`] without the probability volumes.
pub fn segment_study<T: Scalar>(
    snapshots: &[ModelSnapshot<T>],
    study: &CineStudy<T>,
) -> Result<(LabelMap, LabelMap)> {
    let (ed, es, _, _) = segment_study_with_probs(snapshots, study)?;
    Ok((ed, es))
}

/// Keeps only the largest 6-connected (face-adjacent) component of a binary
/// mask. Size ties resolve to the component containing the lexicographically
/// smallest voxel. An empty mask stays empty.
pub fn largest_cc_6(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nz, ny, nx] = dims;
    assert_eq!(mask.len(), nz * ny * nx, "mask length mismatch");
    let mut component = vec![u32::MAX; mask.len()];
    let mut best_id = u32::MAX;
    let mut best_size = 0usize;
    let mut next_id = 0u32;
    let mut stack = Vec::new();

    for start in 0..mask.len() {
        if !mask[start] || component[start] != u32::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        let mut size = 0usize;
        stack.push(start);
        component[start] = id;
        while let Some(idx) = stack.pop() {
            size += 1;
            let z = idx / (ny * nx);
            let rem = idx % (ny * nx);
            let y = rem / nx;
            let x = rem % nx;
            let mut visit = |nidx: usize| {
                if mask[nidx] && component[nidx] == u32::MAX {
                    component[nidx] = id;
                    stack.push(nidx);
                }
            };
            if z > 0 {
                visit(idx - ny * nx);
            }
            if z + 1 < nz {
                visit(idx + ny * nx);
            }
            if y > 0 {
                visit(idx - nx);
            }
            if y + 1 < ny {
                visit(idx + nx);
            }
            if x > 0 {
                visit(idx - 1);
            }
            if x + 1 < nx {
                visit(idx + 1);
            }
        }
        // Strict '>' keeps the first (lexicographically smallest seed)
        // component on ties.
        if size > best_size {
            best_size = size;
            best_id = id;
        }
    }
    component.iter().map(|&c| c == best_id && best_id != u32::MAX).collect()
}

/// Applies [`largest_cc_6`] to each foreground class independently; voxels
/// dropped from a class revert to background.
pub fn postprocess_largest_cc(labels: &LabelMap) -> Result<LabelMap> {
    let dims = labels.dims();
    let mut out = vec![0u8; labels.labels().len()];
    for class in 1..NUM_LABELS as u8 {
        let mask = labels.mask(class);
        let kept = largest_cc_6(&mask, dims);
        for (o, keep) in out.iter_mut().zip(&kept) {
            if *keep {
                *o = class;
            }
        }
    }
    LabelMap::new(dims, labels.spacing_mm(), out)
}

/// Convenience: phase accessor matching [`segment_study`]'s return order.
pub fn phase_labels(pair: &(LabelMap, LabelMap), phase: Phase) -> &LabelMap {
    match phase {
        Phase::Ed => &pair.0,
        Phase::Es => &pair.1,
    }
}
