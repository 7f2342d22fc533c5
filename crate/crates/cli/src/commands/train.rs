//! `cineseg train`: network training with snapshot collection.
//!
//! Flag defaults follow the published protocol (150k iterations, cycle
//! 10k, initial rate 0.2, batch 4, 151-voxel patches, 32-channel layers);
//! desk-scale runs override them, e.g. `--iters 600 --cycle 100 --patch 63
//! --hidden-width 8`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::net::SegNetConfig;
use cineseg_core::preprocess::preprocess_study;
use cineseg_core::snapshot::{save_snapshot, snapshot_file_name};
use cineseg_core::train::{train, DiceVariant, TrainConfig};
use cineseg_core::{Error, Result};

use super::load_studies;

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// Directory of training studies (with reference labels).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for snapshots and the training log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 150_000)]
    pub iters: u64,
    /// Learning-rate cycle length; must divide --iters.
    #[arg(long, default_value_t = 10_000)]
    pub cycle: u64,
    /// Initial learning rate of each cycle.
    #[arg(long, default_value_t = 0.2)]
    pub lr0: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Use the conventional Dice with factor 2 in the numerator instead of
    /// the printed form.
    #[arg(long, default_value_t = false)]
    pub dice_factor2: bool,
    /// Sample window side per slice.
    #[arg(long, default_value_t = 151)]
    pub patch: usize,
    /// Channels per hidden layer.
    #[arg(long, default_value_t = 32)]
    pub hidden_width: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    /// SGD momentum (0 = plain SGD).
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 6)]
    pub snapshots_kept: usize,
    #[arg(long, default_value_t = 100)]
    pub log_interval: u64,
    /// In-plane resampling target in mm.
    #[arg(long, default_value_t = 1.4)]
    pub target_mm: f64,
}

pub fn run(args: TrainArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Io { path: args.out.clone(), source: e })?;

    let mut net = SegNetConfig::paper_default(args.seed);
    net.hidden_width = args.hidden_width;

    let mut cfg = TrainConfig::paper_default(args.seed);
    cfg.total_iters = args.iters;
    cfg.cycle_len = args.cycle;
    cfg.alpha0 = args.lr0;
    cfg.batch_size = args.batch;
    cfg.weight_decay = args.weight_decay;
    cfg.momentum = args.momentum;
    cfg.snapshots_kept = args.snapshots_kept;
    cfg.log_interval = args.log_interval;
    cfg.dice_variant =
        if args.dice_factor2 { DiceVariant::Factor2 } else { DiceVariant::AsPrinted };
    cfg.set_patch(args.patch, &net);
    cfg.validate(&net)?;

    let studies = load_studies(&args.data)?;
    let mut prepared = Vec::with_capacity(studies.len());
    for (_, study) in &studies {
        if study.reference_labels.is_none() {
            return Err(Error::Invalid(format!(
                "training study {} has no reference labels",
                study.patient_id
            )));
        }
        prepared.push(preprocess_study(study, args.target_mm)?);
    }

    let log_path = args.out.join("train_log.csv");
    let mut log = BufWriter::new(
        File::create(&log_path).map_err(|e| Error::Io { path: log_path.clone(), source: e })?,
    );
    let snapshots = train(&prepared, &net, &cfg, Some(&mut log))?;

    for snap in &snapshots {
        save_snapshot(snap, &args.out.join(snapshot_file_name(snap.iteration)))?;
    }
    crate::write_run_config("train", &args, &args.out)?;
    println!(
        "trained {} iterations on {} studies; {} snapshots in {}",
        cfg.total_iters,
        prepared.len(),
        snapshots.len(),
        args.out.display()
    );
    Ok(())
}
