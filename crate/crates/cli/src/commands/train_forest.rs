//! `cineseg train-forest`: fit a Random Forest from a features CSV.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::diagnosis::read_features_csv;
use cineseg_core::forest::{rf_train, save_forest};
use cineseg_core::Result;

use crate::report::out_dir_of;

#[derive(Args, Serialize)]
pub struct TrainForestArgs {
    /// Features CSV (patient_id, 14 feature columns, label).
    #[arg(long)]
    pub features: PathBuf,
    /// Output forest file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(args: TrainForestArgs) -> Result<()> {
    let entries = read_features_csv(&args.features)?;
    let samples: Vec<_> = entries.iter().map(|e| e.features).collect();
    let labels: Vec<_> = entries.iter().map(|e| e.class.index()).collect();
    let forest = rf_train(&samples, &labels, args.trees, args.seed)?;
    save_forest(&forest, &args.out)?;
    crate::write_run_config("train-forest", &args, &out_dir_of(&args.out))?;
    println!("trained {} trees on {} patients -> {}", args.trees, entries.len(), args.out.display());
    Ok(())
}
