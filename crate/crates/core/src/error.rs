//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers that map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: missing/malformed files, inconsistent shapes, invalid flags.
    Input,
    /// A numerically undefined result (empty mask, zero variance, ...).
    Numerical,
}

#[derive(Debug)]
pub enum Error {
    Io { path: PathBuf, source: std::io::Error },
    Json { path: PathBuf, message: String },
    /// File/blob does not match the documented format (magic, version, size).
    Format(String),
    /// A raw file's byte length disagrees with the shape in the header.
    SizeMismatch { path: PathBuf, expected: u64, actual: u64 },
    /// Label value outside {0,1,2,3}.
    InvalidLabel { value: u8, index: usize },
    NonPositiveSpacing { spacing: [f64; 3] },
    /// Shape or metadata constraint violated; message names the constraint.
    Invalid(String),
    /// Tensor/layer shape mismatch.
    ShapeMismatch(String),
    EmptyInput(&'static str),
    /// Hausdorff distance requested for an empty mask.
    EmptyMask { which: &'static str },
    /// Ejection fraction undefined because the end-diastolic volume is zero.
    UndefinedEf { structure: &'static str },
    /// Pearson correlation undefined because one series has zero variance.
    ZeroVariance { which: &'static str },
    /// Feature extraction failed for a patient (e.g. empty LV segmentation).
    FeatureExtraction { patient_id: String, message: String },
    /// A computation produced a non-finite value.
    NonFinite(&'static str),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyMask { .. }
            | Error::UndefinedEf { .. }
            | Error::ZeroVariance { .. }
            | Error::FeatureExtraction { .. }
            | Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Input,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "i/o error on {}: {}", path.display(), source),
            Error::Json { path, message } => {
                write!(f, "invalid JSON in {}: {}", path.display(), message)
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::SizeMismatch { path, expected, actual } => write!(
                f,
                "{}: expected {} bytes, found {}",
                path.display(),
                expected,
                actual
            ),
            Error::InvalidLabel { value, index } => {
                write!(f, "label value {value} at voxel {index} is outside 0..=3")
            }
            Error::NonPositiveSpacing { spacing } => {
                write!(f, "voxel spacing must be positive, got {spacing:?}")
            }
            Error::Invalid(msg) => write!(f, "{msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::EmptyMask { which } => {
                write!(f, "Hausdorff distance undefined: {which} mask is empty")
            }
            Error::UndefinedEf { structure } => {
                write!(f, "ejection fraction undefined: {structure} end-diastolic volume is zero")
            }
            Error::ZeroVariance { which } => {
                write!(f, "Pearson correlation undefined: {which} has zero variance")
            }
            Error::FeatureExtraction { patient_id, message } => {
                write!(f, "feature extraction failed for patient {patient_id}: {message}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value produced in {what}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
