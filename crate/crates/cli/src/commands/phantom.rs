//! `cineseg phantom`: synthetic cohort generation.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::phantom::generate_cohort;
use cineseg_core::study_io::save_study;
use cineseg_core::{Error, Result};

use crate::report::{write_json, CohortIndexEntry, TruthFile, COHORT_FILE, TRUTH_FILE};

#[derive(Args, Serialize)]
pub struct PhantomArgs {
    /// Output cohort directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Studies generated per disease class.
    #[arg(long, default_value_t = 5)]
    pub per_class: usize,
    /// Master seed; per-study seeds derive from it.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(args: PhantomArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Io { path: args.out.clone(), source: e })?;

    let cohort = generate_cohort::<f32>(args.per_class, args.seed)?;
    let mut index = Vec::with_capacity(cohort.len());
    for phantom in &cohort {
        let dir = args.out.join(&phantom.study.patient_id);
        save_study(&phantom.study, &dir)?;
        write_json(
            &TruthFile { class: phantom.truth.class, truth: phantom.truth.clone() },
            &dir.join(TRUTH_FILE),
        )?;
        index.push(CohortIndexEntry {
            patient_id: phantom.study.patient_id.clone(),
            class: phantom.truth.class,
        });
    }
    write_json(&index, &args.out.join(COHORT_FILE))?;
    crate::write_run_config("phantom", &args, &args.out)?;
    println!("wrote {} studies to {}", cohort.len(), args.out.display());
    Ok(())
}
