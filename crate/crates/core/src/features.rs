//! The 14-dimensional patient descriptor: two patient-based features
//! (weight, height) and twelve image-based features derived from the ED/ES
//! segmentations.

use crate::error::{Error, Result};
use crate::metrics::{quantify, StructureQuantification};
use crate::scalar::Scalar;
use crate::volume::{CineStudy, LabelMap};

pub const NUM_FEATURES: usize = 14;

/// Column order of every feature vector, CSV file and importance report.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "weight_kg",
    "height_cm",
    "lv_edv_ml",
    "lv_esv_ml",
    "rv_edv_ml",
    "rv_esv_ml",
    "myo_edv_ml",
    "myo_esv_ml",
    "lv_ef_pct",
    "rv_ef_pct",
    "rv_lv_ratio_ed",
    "rv_lv_ratio_es",
    "myo_lv_ratio_ed",
    "myo_lv_ratio_es",
];

/// Fixed-order feature vector; all entries finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn new(values: [f64; NUM_FEATURES]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector(values))
    }

    #[inline]
    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

/// Builds the feature vector for one patient from its metadata and a pair
/// of ED/ES label maps (either reference or automatic segmentations).
pub fn extract_features<T: Scalar>(
    study: &CineStudy<T>,
    labels_ed: &LabelMap,
    labels_es: &LabelMap,
) -> Result<FeatureVector> {
    let q = quantify(labels_ed, labels_es).map_err(|e| Error::FeatureExtraction {
        patient_id: study.patient_id.clone(),
        message: e.to_string(),
    })?;
    from_quantification(&study.patient_id, study.weight_kg, study.height_cm, &q)
}

/// Assembles the vector from an existing quantification.
pub fn from_quantification(
    patient_id: &str,
    weight_kg: f64,
    height_cm: f64,
    q: &StructureQuantification,
) -> Result<FeatureVector> {
    if q.lv_edv_ml <= 0.0 || q.lv_esv_ml <= 0.0 {
        return Err(Error::FeatureExtraction {
            patient_id: patient_id.to_string(),
            message: format!(
                "LV volume must be positive at both phases (EDV {} ml, ESV {} ml)",
                q.lv_edv_ml, q.lv_esv_ml
            ),
        });
    }
    FeatureVector::new([
        weight_kg,
        height_cm,
        q.lv_edv_ml,
        q.lv_esv_ml,
        q.rv_edv_ml,
        q.rv_esv_ml,
        q.myo_edv_ml,
        q.myo_esv_ml,
        q.lv_ef_pct,
        q.rv_ef_pct,
        q.rv_edv_ml / q.lv_edv_ml,
        q.rv_esv_ml / q.lv_esv_ml,
        q.myo_edv_ml / q.lv_edv_ml,
        q.myo_esv_ml / q.lv_esv_ml,
    ])
    .map_err(|_| Error::FeatureExtraction {
        patient_id: patient_id.to_string(),
        message: "non-finite feature value".into(),
    })
}
