//! Image volumes, label maps and patient studies.
//!
//! A study holds one end-diastole (ED) and one end-systole (ES) short-axis
//! volume of the same patient, basic patient metadata, and optionally the
//! reference segmentations used for training and evaluation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cardiac phase of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Ed,
    Es,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ed => "ed",
            Phase::Es => "es",
        }
    }
}

/// Segmentation classes, one per voxel label value.
pub const LABEL_BG: u8 = 0;
pub const LABEL_RV: u8 = 1;
pub const LABEL_MYO: u8 = 2;
pub const LABEL_LV: u8 = 3;
pub const NUM_LABELS: usize = 4;

/// One 3-D image volume `[slices, rows, cols]` with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct CineVolume<T> {
    pub phase: Phase,
    dims: [usize; 3],
    /// Spacing in mm, ordered (z, y, x).
    spacing_mm: [f64; 3],
    data: Vec<T>,
}

impl<T: Scalar> CineVolume<T> {
    pub fn new(phase: Phase, dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<T>) -> Result<Self> {
        validate_spacing(spacing_mm)?;
        validate_dims(dims)?;
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "volume dims {dims:?} hold {n} voxels, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("volume data"));
        }
        Ok(CineVolume { phase, dims, spacing_mm, data })
    }

    pub fn filled(phase: Phase, dims: [usize; 3], spacing_mm: [f64; 3], value: T) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(phase, dims, spacing_mm, vec![value; n])
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    #[inline]
    pub fn slices(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// One contiguous `[rows, cols]` slice.
    #[inline]
    pub fn slice(&self, z: usize) -> &[T] {
        let n = self.dims[1] * self.dims[2];
        &self.data[z * n..(z + 1) * n]
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> T {
        self.data[(z * self.dims[1] + y) * self.dims[2] + x]
    }
}

/// 3-D integer label grid over `{0=BG, 1=RV, 2=Myo, 3=LV}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        validate_spacing(spacing_mm)?;
        validate_dims(dims)?;
        let n: usize = dims.iter().product();
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "label dims {dims:?} hold {n} voxels, got {}",
                labels.len()
            )));
        }
        if let Some(index) = labels.iter().position(|&v| v as usize >= NUM_LABELS) {
            return Err(Error::InvalidLabel { value: labels[index], index });
        }
        Ok(LabelMap { dims, spacing_mm, labels })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims[1] * self.dims[2];
        &self.labels[z * n..(z + 1) * n]
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> u8 {
        self.labels[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    /// Binary mask of one label class.
    pub fn mask(&self, label: u8) -> Vec<bool> {
        self.labels.iter().map(|&v| v == label).collect()
    }
}

/// One patient: paired ED/ES volumes, metadata, optional reference labels.
#[derive(Debug, Clone)]
pub struct CineStudy<T> {
    pub patient_id: String,
    pub ed: CineVolume<T>,
    pub es: CineVolume<T>,
    pub weight_kg: f64,
    pub height_cm: f64,
    pub reference_labels: Option<(LabelMap, LabelMap)>,
}

impl<T: Scalar> CineStudy<T> {
    pub fn new(
        patient_id: String,
        ed: CineVolume<T>,
        es: CineVolume<T>,
        weight_kg: f64,
        height_cm: f64,
        reference_labels: Option<(LabelMap, LabelMap)>,
    ) -> Result<Self> {
        if ed.phase != Phase::Ed || es.phase != Phase::Es {
            return Err(Error::Invalid("study volumes must be tagged ED and ES".into()));
        }
        if !(weight_kg > 0.0) || !(height_cm > 0.0) {
            return Err(Error::Invalid(format!(
                "patient weight/height must be positive, got {weight_kg} kg / {height_cm} cm"
            )));
        }
        if ed.slices() != es.slices() {
            return Err(Error::Invalid(format!(
                "ED and ES slice counts differ: {} vs {}",
                ed.slices(),
                es.slices()
            )));
        }
        if ed.spacing_mm() != es.spacing_mm() {
            return Err(Error::Invalid(format!(
                "ED and ES spacings differ: {:?} vs {:?}",
                ed.spacing_mm(),
                es.spacing_mm()
            )));
        }
        if let Some((led, les)) = &reference_labels {
            if led.dims() != ed.dims() {
                return Err(Error::Invalid(format!(
                    "ED labels dims {:?} do not match volume dims {:?}",
                    led.dims(),
                    ed.dims()
                )));
            }
            if les.dims() != es.dims() {
                return Err(Error::Invalid(format!(
                    "ES labels dims {:?} do not match volume dims {:?}",
                    les.dims(),
                    es.dims()
                )));
            }
        }
        Ok(CineStudy { patient_id, ed, es, weight_kg, height_cm, reference_labels })
    }

    pub fn volume(&self, phase: Phase) -> &CineVolume<T> {
        match phase {
            Phase::Ed => &self.ed,
            Phase::Es => &self.es,
        }
    }

    pub fn reference(&self, phase: Phase) -> Option<&LabelMap> {
        self.reference_labels.as_ref().map(|(ed, es)| match phase {
            Phase::Ed => ed,
            Phase::Es => es,
        })
    }
}

fn validate_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonPositiveSpacing { spacing })
    }
}

fn validate_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().all(|&d| d >= 1) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("all dimensions must be >= 1, got {dims:?}")))
    }
}
