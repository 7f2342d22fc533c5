//! `cineseg crossval`: stratified k-fold cross-validation of the diagnosis
//! stage over a labeled cohort.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::diagnosis::{cross_validate, write_features_csv, ALL_CLASSES};
use cineseg_core::features::FEATURE_NAMES;
use cineseg_core::{Error, Result};

use super::{collect_features, load_ensemble, load_studies, FeatureSource};
use crate::report::{out_dir_of, write_json, NamedReport};

#[derive(Args, Serialize)]
pub struct CrossvalArgs {
    /// Directory of labeled studies (truth.json per study).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Quantify reference labels or ensemble segmentations.
    #[arg(long, value_enum, default_value_t = FeatureSource::Reference)]
    pub feature_source: FeatureSource,
    /// Snapshot ensemble for --feature-source automatic.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// In-plane resampling target in mm.
    #[arg(long, default_value_t = 1.4)]
    pub target_mm: f64,
}

pub fn run(args: CrossvalArgs) -> Result<()> {
    let studies = load_studies(&args.data)?;
    let snapshots = match (args.feature_source, &args.model_dir) {
        (FeatureSource::Automatic, Some(dir)) => Some(load_ensemble(dir)?),
        (FeatureSource::Automatic, None) => {
            return Err(Error::Invalid(
                "--feature-source automatic requires --model-dir".into(),
            ))
        }
        (FeatureSource::Reference, _) => None,
    };
    let cohort =
        collect_features(&studies, args.feature_source, snapshots.as_deref(), args.target_mm)?;

    let outcome = cross_validate(&cohort, args.k, args.seed, args.trees)?;

    let out_dir = out_dir_of(&args.out);
    let features_csv = out_dir.join("features.csv");
    write_features_csv(&cohort, &features_csv)?;

    let mut importance: Vec<(String, f64)> = FEATURE_NAMES
        .iter()
        .map(|n| n.to_string())
        .zip(outcome.feature_importance.iter().copied())
        .collect();
    importance.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let top_features: Vec<_> = importance.iter().take(3).cloned().collect();

    let per_patient: Vec<NamedReport> = outcome
        .per_patient
        .iter()
        .map(|p| NamedReport::new(&p.patient_id, Some(p.true_class), &p.report))
        .collect();

    write_json(
        &serde_json::json!({
            "k": args.k,
            "seed": args.seed,
            "feature_source": args.feature_source,
            "trees": args.trees,
            "accuracy": outcome.accuracy,
            "class_order": ALL_CLASSES.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
            "confusion": outcome.confusion,
            "top_features": top_features,
            "feature_importance": importance,
            "patients": per_patient,
            "features_csv": features_csv.display().to_string(),
        }),
        &args.out,
    )?;
    crate::write_run_config("crossval", &args, &out_dir)?;
    println!(
        "cross-validated {} patients in {} folds: accuracy {:.3} -> {}",
        cohort.len(),
        args.k,
        outcome.accuracy,
        args.out.display()
    );
    Ok(())
}
