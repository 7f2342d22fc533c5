//! Shared helpers for JSON reports and cohort metadata files.

use std::path::{Path, PathBuf};

use cineseg_core::diagnosis::{DiagnosisReport, DiseaseClass, ALL_CLASSES};
use cineseg_core::phantom::PhantomTruth;
use cineseg_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const TRUTH_FILE: &str = "truth.json";
pub const COHORT_FILE: &str = "cohort.json";

/// Per-study sidecar written by `phantom`: the class label and the analytic
/// ground-truth geometry.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub class: DiseaseClass,
    pub truth: PhantomTruth,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CohortIndexEntry {
    pub patient_id: String,
    pub class: DiseaseClass,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("report serializes"))
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })
}

/// Class label of a study directory, from its `truth.json`.
pub fn read_study_class(study_dir: &Path) -> Result<DiseaseClass> {
    let truth: TruthFile = read_json(&study_dir.join(TRUTH_FILE))?;
    Ok(truth.class)
}

/// A diagnosis report with class names attached, for JSON output.
#[derive(Debug, Serialize)]
pub struct NamedReport {
    pub patient_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_class: Option<String>,
    pub predicted_class: String,
    pub posterior: Vec<(String, f64)>,
    pub entropy_nats: f64,
    pub entropy_normalized: f64,
}

impl NamedReport {
    pub fn new(patient_id: &str, true_class: Option<DiseaseClass>, report: &DiagnosisReport) -> Self {
        NamedReport {
            patient_id: patient_id.to_string(),
            true_class: true_class.map(|c| c.as_str().to_string()),
            predicted_class: report.predicted_class.as_str().to_string(),
            posterior: ALL_CLASSES
                .iter()
                .zip(report.posterior)
                .map(|(c, p)| (c.as_str().to_string(), p))
                .collect(),
            entropy_nats: report.entropy_nats,
            entropy_normalized: report.entropy_normalized,
        }
    }
}

/// Mean and sample standard deviation of a series.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn out_dir_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."))
}
