//! In-plane resampling and percentile intensity normalization.
//!
//! Short-axis stacks arrive with in-plane spacings between roughly 1.4 and
//! 1.7 mm; every 2-D slice is resampled to a common 1.4x1.4 mm grid before
//! the network sees it. Intensities are then mapped to `[0, 1]` using the
//! 5th and 95th percentile of the whole volume. The slice axis is never
//! resampled.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{CineStudy, CineVolume, LabelMap};

pub const DEFAULT_TARGET_MM: f64 = 1.4;
pub const NORM_LO_PCT: f64 = 5.0;
pub const NORM_HI_PCT: f64 = 95.0;

/// Linear-interpolation percentile at rank position `q/100 * (n-1)`.
pub fn percentile<T: Scalar>(values: &[T], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of empty sequence"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Invalid(format!("percentile q must be in [0,100], got {q}")));
    }
    let mut sorted: Vec<f64> = values.iter().map(|v| v.to_f64_s()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Maps intensities to `[0, 1]` by the volume's 5th/95th percentile window.
///
/// Values outside the window are clamped. A constant volume (p95 == p5)
/// deterministically maps to all zeros.
pub fn normalize_intensity<T: Scalar>(vol: &CineVolume<T>) -> CineVolume<T> {
    let p5 = percentile(vol.data(), NORM_LO_PCT).expect("volume is non-empty");
    let p95 = percentile(vol.data(), NORM_HI_PCT).expect("volume is non-empty");
    let range = p95 - p5;
    let data: Vec<T> = if range > 0.0 {
        vol.data()
            .iter()
            .map(|v| {
                let t = (v.to_f64_s() - p5) / range;
                T::from_f64_s(t.clamp(0.0, 1.0))
            })
            .collect()
    } else {
        vec![T::zero(); vol.data().len()]
    };
    CineVolume::new(vol.phase, vol.dims(), vol.spacing_mm(), data)
        .expect("normalization preserves shape and finiteness")
}

/// Output extent for one axis: physical length divided by the target
/// spacing, rounded to nearest, never below 1.
fn resampled_extent(n: usize, spacing: f64, target: f64) -> usize {
    ((n as f64 * spacing / target).round() as usize).max(1)
}

/// Source coordinate (in input pixel units) of output pixel `i`: pixel
/// centers are aligned by physical position over a shared origin.
#[inline]
fn source_coord(i: usize, target: f64, spacing: f64) -> f64 {
    ((i as f64 + 0.5) * target) / spacing - 0.5
}

/// Resamples every slice to `target_mm` in-plane spacing with bilinear
/// interpolation. The z axis is untouched.
pub fn resample_inplane<T: Scalar>(vol: &CineVolume<T>, target_mm: f64) -> Result<CineVolume<T>> {
    if !(target_mm > 0.0) {
        return Err(Error::Invalid(format!("target spacing must be > 0, got {target_mm}")));
    }
    let [ns, rows, cols] = vol.dims();
    let [sz, sy, sx] = vol.spacing_mm();
    let out_rows = resampled_extent(rows, sy, target_mm);
    let out_cols = resampled_extent(cols, sx, target_mm);

    if out_rows == rows && out_cols == cols && sy == target_mm && sx == target_mm {
        return Ok(vol.clone());
    }

    let row_coords: Vec<f64> = (0..out_rows).map(|i| source_coord(i, target_mm, sy)).collect();
    let col_coords: Vec<f64> = (0..out_cols).map(|j| source_coord(j, target_mm, sx)).collect();

    let mut data = Vec::with_capacity(ns * out_rows * out_cols);
    for z in 0..ns {
        let slice = vol.slice(z);
        for &yc in &row_coords {
            let (y0, y1, fy) = clamped_lerp_index(yc, rows);
            for &xc in &col_coords {
                let (x0, x1, fx) = clamped_lerp_index(xc, cols);
                let v00 = slice[y0 * cols + x0].to_f64_s();
                let v01 = slice[y0 * cols + x1].to_f64_s();
                let v10 = slice[y1 * cols + x0].to_f64_s();
                let v11 = slice[y1 * cols + x1].to_f64_s();
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                data.push(T::from_f64_s(top + fy * (bot - top)));
            }
        }
    }
    CineVolume::new(vol.phase, [ns, out_rows, out_cols], [sz, target_mm, target_mm], data)
}

/// Nearest-neighbor in-plane resampling for categorical label maps.
pub fn resample_labels(labels: &LabelMap, target_mm: f64) -> Result<LabelMap> {
    if !(target_mm > 0.0) {
        return Err(Error::Invalid(format!("target spacing must be > 0, got {target_mm}")));
    }
    let [ns, rows, cols] = labels.dims();
    let [sz, sy, sx] = labels.spacing_mm();
    let out_rows = resampled_extent(rows, sy, target_mm);
    let out_cols = resampled_extent(cols, sx, target_mm);

    if out_rows == rows && out_cols == cols && sy == target_mm && sx == target_mm {
        return Ok(labels.clone());
    }

    let row_idx: Vec<usize> = (0..out_rows)
        .map(|i| nearest_index(source_coord(i, target_mm, sy), rows))
        .collect();
    let col_idx: Vec<usize> = (0..out_cols)
        .map(|j| nearest_index(source_coord(j, target_mm, sx), cols))
        .collect();

    let mut data = Vec::with_capacity(ns * out_rows * out_cols);
    for z in 0..ns {
        let slice = labels.slice(z);
        for &y in &row_idx {
            for &x in &col_idx {
                data.push(slice[y * cols + x]);
            }
        }
    }
    LabelMap::new([ns, out_rows, out_cols], [sz, target_mm, target_mm], data)
}

/// Resamples both phases (and reference labels, when present) to the target
/// in-plane spacing and normalizes intensities. This is the canonical
/// preparation step before training or inference.
pub fn preprocess_study<T: Scalar>(study: &CineStudy<T>, target_mm: f64) -> Result<CineStudy<T>> {
    let ed = normalize_intensity(&resample_inplane(&study.ed, target_mm)?);
    let es = normalize_intensity(&resample_inplane(&study.es, target_mm)?);
    let reference_labels = match &study.reference_labels {
        Some((led, les)) => {
            Some((resample_labels(led, target_mm)?, resample_labels(les, target_mm)?))
        }
        None => None,
    };
    CineStudy::new(
        study.patient_id.clone(),
        ed,
        es,
        study.weight_kg,
        study.height_cm,
        reference_labels,
    )
}

#[inline]
fn clamped_lerp_index(coord: f64, n: usize) -> (usize, usize, f64) {
    let c = coord.clamp(0.0, (n - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

#[inline]
fn nearest_index(coord: f64, n: usize) -> usize {
    (coord + 0.5).floor().clamp(0.0, (n - 1) as f64) as usize
}
