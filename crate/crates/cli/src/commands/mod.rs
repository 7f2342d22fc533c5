pub mod crossval;
pub mod diagnose;
pub mod evaluate;
pub mod features;
pub mod phantom;
pub mod segment;
pub mod train;
pub mod train_forest;

use std::path::Path;

use cineseg_core::diagnosis::CohortEntry;
use cineseg_core::features::extract_features;
use cineseg_core::infer::segment_study;
use cineseg_core::preprocess::preprocess_study;
use cineseg_core::snapshot::{list_snapshot_files, load_snapshot, ModelSnapshot};
use cineseg_core::study_io::{list_study_dirs, load_study};
use cineseg_core::volume::CineStudy;
use cineseg_core::{Error, Result};

/// Loads every study below `root` (sorted by directory name).
pub fn load_studies(root: &Path) -> Result<Vec<(std::path::PathBuf, CineStudy<f32>)>> {
    let dirs = list_study_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::Invalid(format!(
            "no study directories (containing meta.json) under {}",
            root.display()
        )));
    }
    dirs.into_iter()
        .map(|dir| load_study::<f32>(&dir).map(|s| (dir, s)))
        .collect()
}

/// Loads a snapshot ensemble from a directory of `*.snap` files.
pub fn load_ensemble(dir: &Path) -> Result<Vec<ModelSnapshot<f32>>> {
    let files = list_snapshot_files(dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!("no *.snap files in {}", dir.display())));
    }
    files.iter().map(|f| load_snapshot::<f32>(f)).collect()
}

/// How the diagnosis features of a cohort are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Segment with a snapshot ensemble, then quantify the predictions.
    Automatic,
    /// Quantify the reference label maps directly.
    Reference,
}

/// Extracts one cohort entry per study, using reference labels or ensemble
/// segmentations on the resampled grid.
pub fn collect_features(
    studies: &[(std::path::PathBuf, CineStudy<f32>)],
    source: FeatureSource,
    snapshots: Option<&[ModelSnapshot<f32>]>,
    target_mm: f64,
) -> Result<Vec<CohortEntry>> {
    let mut entries = Vec::with_capacity(studies.len());
    for (dir, study) in studies {
        let class = crate::report::read_study_class(dir)?;
        let prepped = preprocess_study(study, target_mm)?;
        let features = match source {
            FeatureSource::Reference => {
                let (led, les) = prepped.reference_labels.as_ref().ok_or_else(|| {
                    Error::Invalid(format!(
                        "study {} has no reference labels for feature extraction",
                        study.patient_id
                    ))
                })?;
                extract_features(&prepped, led, les)?
            }
            FeatureSource::Automatic => {
                let snapshots = snapshots.ok_or_else(|| {
                    Error::Invalid(
                        "automatic feature extraction needs a snapshot ensemble (--model-dir)"
                            .into(),
                    )
                })?;
                let (led, les) = segment_study(snapshots, &prepped)?;
                extract_features(&prepped, &led, &les)?
            }
        };
        entries.push(CohortEntry { patient_id: study.patient_id.clone(), class, features });
    }
    Ok(entries)
}
