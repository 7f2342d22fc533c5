//! Segmentation and quantification metrics: Dice coefficient, Hausdorff
//! distance in millimeters, cavity volumes / myocardial mass / ejection
//! fractions, Bland-Altman agreement, Pearson correlation and the
//! multi-class confusion matrix.

use crate::error::{Error, Result};
use crate::volume::{LabelMap, LABEL_LV, LABEL_MYO, LABEL_RV};

/// Myocardial tissue density used to convert volume to mass.
pub const MYO_DENSITY_G_PER_ML: f64 = 1.05;

/// Dice overlap `2|A n B| / (|A| + |B|)`.
///
/// Convention for degenerate masks: both empty -> 1, exactly one empty -> 0.
pub fn dice_coef(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "dice_coef length mismatch");
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Boundary voxels: foreground with at least one background 6-neighbor; the
/// grid edge counts as background. Returns physical coordinates in mm.
fn boundary_points(mask: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<[f64; 3]> {
    let [nz, ny, nx] = dims;
    let mut pts = Vec::new();
    let at = |z: usize, y: usize, x: usize| mask[(z * ny + y) * nx + x];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !at(z, y, x) {
                    continue;
                }
                let exposed = (z == 0 || !at(z - 1, y, x))
                    || (z + 1 == nz || !at(z + 1, y, x))
                    || (y == 0 || !at(z, y - 1, x))
                    || (y + 1 == ny || !at(z, y + 1, x))
                    || (x == 0 || !at(z, y, x - 1))
                    || (x + 1 == nx || !at(z, y, x + 1));
                if exposed {
                    pts.push([z as f64 * spacing[0], y as f64 * spacing[1], x as f64 * spacing[2]]);
                }
            }
        }
    }
    pts
}

#[inline]
fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dz = a[0] - b[0];
    let dy = a[1] - b[1];
    let dx = a[2] - b[2];
    (dz * dz + dy * dy + dx * dx).sqrt()
}

/// Directed Hausdorff `max_a min_b d(a, b)` with the usual early-exit: a
/// point whose running minimum falls below the current maximum cannot raise
/// the result.
fn directed_hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut h = 0.0f64;
    for pa in a {
        let mut min_d = f64::INFINITY;
        for pb in b {
            let d = dist(pa, pb);
            if d < min_d {
                min_d = d;
                if min_d < h {
                    break;
                }
            }
        }
        if min_d > h {
            h = min_d;
        }
    }
    h
}

/// Symmetric Hausdorff distance between the boundary surfaces of two masks,
/// in millimeters, under anisotropic voxel spacing.
pub fn hausdorff_mm(
    a: &[bool],
    b: &[bool],
    dims: [usize; 3],
    spacing: [f64; 3],
) -> Result<f64> {
    let pa = boundary_points(a, dims, spacing);
    let pb = boundary_points(b, dims, spacing);
    if pa.is_empty() {
        return Err(Error::EmptyMask { which: "first" });
    }
    if pb.is_empty() {
        return Err(Error::EmptyMask { which: "second" });
    }
    Ok(directed_hausdorff(&pa, &pb).max(directed_hausdorff(&pb, &pa)))
}

/// Volumes (ml), myocardial mass (g) and ejection fractions (%) derived
/// from a pair of ED/ES label maps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StructureQuantification {
    pub lv_edv_ml: f64,
    pub lv_esv_ml: f64,
    pub rv_edv_ml: f64,
    pub rv_esv_ml: f64,
    pub myo_edv_ml: f64,
    pub myo_esv_ml: f64,
    pub myo_mass_ed_g: f64,
    pub myo_mass_es_g: f64,
    pub lv_ef_pct: f64,
    pub rv_ef_pct: f64,
}

fn count(labels: &LabelMap, class: u8) -> usize {
    labels.labels().iter().filter(|&&v| v == class).count()
}

/// Volume of `count` voxels in ml: `count * z * y * x mm^3 / 1000`.
pub fn voxels_to_ml(count: usize, spacing: [f64; 3]) -> f64 {
    count as f64 * (spacing[0] * spacing[1] * spacing[2]) / 1000.0
}

/// Ejection fraction `100 * (EDV - ESV) / EDV`; errors when `EDV == 0`.
pub fn ejection_fraction(edv: f64, esv: f64, structure: &'static str) -> Result<f64> {
    if edv == 0.0 {
        return Err(Error::UndefinedEf { structure });
    }
    Ok(100.0 * (edv - esv) / edv)
}

/// Quantifies both phases. Label maps must share dimensions' spacing.
pub fn quantify(labels_ed: &LabelMap, labels_es: &LabelMap) -> Result<StructureQuantification> {
    if labels_ed.spacing_mm() != labels_es.spacing_mm() {
        return Err(Error::Invalid(format!(
            "ED and ES label spacings differ: {:?} vs {:?}",
            labels_ed.spacing_mm(),
            labels_es.spacing_mm()
        )));
    }
    let spacing = labels_ed.spacing_mm();
    let lv_edv = voxels_to_ml(count(labels_ed, LABEL_LV), spacing);
    let lv_esv = voxels_to_ml(count(labels_es, LABEL_LV), spacing);
    let rv_edv = voxels_to_ml(count(labels_ed, LABEL_RV), spacing);
    let rv_esv = voxels_to_ml(count(labels_es, LABEL_RV), spacing);
    let myo_edv = voxels_to_ml(count(labels_ed, LABEL_MYO), spacing);
    let myo_esv = voxels_to_ml(count(labels_es, LABEL_MYO), spacing);
    Ok(StructureQuantification {
        lv_edv_ml: lv_edv,
        lv_esv_ml: lv_esv,
        rv_edv_ml: rv_edv,
        rv_esv_ml: rv_esv,
        myo_edv_ml: myo_edv,
        myo_esv_ml: myo_esv,
        myo_mass_ed_g: myo_edv * MYO_DENSITY_G_PER_ML,
        myo_mass_es_g: myo_esv * MYO_DENSITY_G_PER_ML,
        lv_ef_pct: ejection_fraction(lv_edv, lv_esv, "LV")?,
        rv_ef_pct: ejection_fraction(rv_edv, rv_esv, "RV")?,
    })
}

/// Bland-Altman agreement between paired measurements. Differences are
/// `automatic - reference`; limits of agreement are `bias +/- 1.96 * sd`
/// with the sample (n-1) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub sd: f64,
}

pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("Bland-Altman pairs"));
    }
    let n = pairs.len() as f64;
    let diffs: Vec<f64> = pairs.iter().map(|&(reference, automatic)| automatic - reference).collect();
    let bias = diffs.iter().sum::<f64>() / n;
    let sd = if pairs.len() < 2 {
        0.0
    } else {
        (diffs.iter().map(|d| (d - bias) * (d - bias)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(BlandAltman { bias, loa_low: bias - 1.96 * sd, loa_high: bias + 1.96 * sd, sd })
}

/// Pearson correlation coefficient; errors if either series has zero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len(), "pearson length mismatch");
    if x.is_empty() {
        return Err(Error::EmptyInput("correlation series"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance { which: "x" });
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance { which: "y" });
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Confusion matrix (`matrix[true][predicted]`) and overall accuracy.
pub fn confusion_and_accuracy(
    true_labels: &[usize],
    predicted_labels: &[usize],
    classes: usize,
) -> Result<(Vec<Vec<usize>>, f64)> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::Invalid("label series lengths differ".into()));
    }
    if true_labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let mut matrix = vec![vec![0usize; classes]; classes];
    for (&t, &p) in true_labels.iter().zip(predicted_labels) {
        if t >= classes || p >= classes {
            return Err(Error::Invalid(format!("label out of range: true {t}, predicted {p}")));
        }
        matrix[t][p] += 1;
    }
    let correct: usize = (0..classes).map(|i| matrix[i][i]).sum();
    Ok((matrix, correct as f64 / true_labels.len() as f64))
}
