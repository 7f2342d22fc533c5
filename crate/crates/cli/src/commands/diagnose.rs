//! `cineseg diagnose`: classify patients with a trained forest.
//!
//! Features come either from a CSV (`--features`) or are extracted from
//! studies plus segmentation label maps (`--data` + `--labels`).

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::diagnosis::{read_features_csv, rf_predict};
use cineseg_core::features::extract_features;
use cineseg_core::forest::load_forest;
use cineseg_core::preprocess::preprocess_study;
use cineseg_core::study_io::{list_study_dirs, load_study};
use cineseg_core::{Error, Result};

use crate::report::{out_dir_of, write_json, NamedReport};

#[derive(Args, Serialize)]
pub struct DiagnoseArgs {
    /// Features CSV (alternative to --data/--labels).
    #[arg(long, conflicts_with_all = ["data", "labels"])]
    pub features: Option<PathBuf>,
    /// Directory of studies carrying patient metadata.
    #[arg(long, requires = "labels")]
    pub data: Option<PathBuf>,
    /// Directory of segmented studies (label maps to quantify).
    #[arg(long, requires = "data")]
    pub labels: Option<PathBuf>,
    /// Trained forest file.
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// In-plane resampling target in mm (label-map route).
    #[arg(long, default_value_t = 1.4)]
    pub target_mm: f64,
}

pub fn run(args: DiagnoseArgs) -> Result<()> {
    let forest = load_forest(&args.model)?;
    let mut reports = Vec::new();

    match (&args.features, &args.data, &args.labels) {
        (Some(csv), None, None) => {
            for entry in read_features_csv(csv)? {
                let report = rf_predict(&forest, &entry.features);
                reports.push(NamedReport::new(&entry.patient_id, Some(entry.class), &report));
            }
        }
        (None, Some(data), Some(labels)) => {
            let label_dirs = list_study_dirs(labels)?;
            if label_dirs.is_empty() {
                return Err(Error::Invalid(format!(
                    "no segmented studies under {}",
                    labels.display()
                )));
            }
            for label_dir in label_dirs {
                let segmented = load_study::<f32>(&label_dir)?;
                let (led, les) = segmented.reference_labels.as_ref().ok_or_else(|| {
                    Error::Invalid(format!(
                        "segmented study {} has no label maps",
                        segmented.patient_id
                    ))
                })?;
                let meta_dir = data.join(label_dir.file_name().unwrap());
                let study = load_study::<f32>(&meta_dir)?;
                let prepped = preprocess_study(&study, args.target_mm)?;
                let features = extract_features(&prepped, led, les)?;
                let report = rf_predict(&forest, &features);
                reports.push(NamedReport::new(&study.patient_id, None, &report));
            }
        }
        _ => {
            return Err(Error::Invalid(
                "provide either --features CSV or both --data and --labels".into(),
            ))
        }
    }

    write_json(&serde_json::json!({ "patients": reports }), &args.out)?;
    crate::write_run_config("diagnose", &args, &out_dir_of(&args.out))?;
    println!("diagnosed {} patients -> {}", reports.len(), args.out.display());
    Ok(())
}
