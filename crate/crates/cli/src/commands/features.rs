//! `cineseg features`: extract the per-patient feature CSV of a cohort.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::diagnosis::write_features_csv;
use cineseg_core::{Error, Result};

use super::{collect_features, load_ensemble, load_studies, FeatureSource};
use crate::report::out_dir_of;

#[derive(Args, Serialize)]
pub struct FeaturesArgs {
    /// Directory of studies (each with truth.json class labels).
    #[arg(long)]
    pub data: PathBuf,
    /// Where the features come from.
    #[arg(long, value_enum, default_value_t = FeatureSource::Reference)]
    pub feature_source: FeatureSource,
    /// Snapshot ensemble for --feature-source automatic.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// In-plane resampling target in mm.
    #[arg(long, default_value_t = 1.4)]
    pub target_mm: f64,
}

pub fn run(args: FeaturesArgs) -> Result<()> {
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
    let entries =
        collect_features(&studies, args.feature_source, snapshots.as_deref(), args.target_mm)?;
    write_features_csv(&entries, &args.out)?;
    crate::write_run_config("features", &args, &out_dir_of(&args.out))?;
    println!("wrote {} feature rows to {}", entries.len(), args.out.display());
    Ok(())
}
