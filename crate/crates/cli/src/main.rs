//! `cineseg` command-line interface.
//!
//! Subcommands cover the whole pipeline: synthetic cohort generation,
//! network training, ensemble segmentation, segmentation evaluation,
//! feature extraction, forest training, per-patient diagnosis and
//! stratified cross-validation.
//!
//! Exit codes: 0 on success, 1 on numerical failures (undefined metrics,
//! non-finite results), 2 on usage or input errors.

mod commands;
mod report;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use cineseg_core::ErrorKind;

#[derive(Parser)]
#[command(name = "cineseg", version, about = "Cardiac cine-MR segmentation and diagnosis pipeline")]
struct Cli {
    /// Worker threads for internal parallelism (default: CINESEG_THREADS
    /// or the core count). Results are identical for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a balanced synthetic cohort with reference labels.
    Phantom(commands::phantom::PhantomArgs),
    /// Train the segmentation network and store snapshot models.
    Train(commands::train::TrainArgs),
    /// Segment studies with a snapshot ensemble.
    Segment(commands::segment::SegmentArgs),
    /// Compare predicted label maps against references (Dice, Hausdorff).
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Extract the 14-feature vectors of a labeled cohort into a CSV.
    Features(commands::features::FeaturesArgs),
    /// Train a Random Forest from a features CSV.
    TrainForest(commands::train_forest::TrainForestArgs),
    /// Classify patients with a trained forest.
    Diagnose(commands::diagnose::DiagnoseArgs),
    /// Stratified k-fold cross-validation of the diagnosis stage.
    Crossval(commands::crossval::CrossvalArgs),
}

fn main() {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("CINESEG_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }

    let result = match cli.command {
        Command::Phantom(args) => commands::phantom::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Segment(args) => commands::segment::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Features(args) => commands::features::run(args),
        Command::TrainForest(args) => commands::train_forest::run(args),
        Command::Diagnose(args) => commands::diagnose::run(args),
        Command::Crossval(args) => commands::crossval::run(args),
    };

    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.kind() {
                ErrorKind::Numerical => 1,
                ErrorKind::Input => 2,
            };
            std::process::exit(code);
        }
    }
}

/// Writes the resolved configuration of a run next to its outputs, so every
/// artifact records how it was produced.
pub(crate) fn write_run_config<A: serde::Serialize>(
    command: &str,
    args: &A,
    out_dir: &PathBuf,
) -> cineseg_core::Result<()> {
    let payload = serde_json::json!({
        "tool": "cineseg",
        "command": command,
        "config": args,
    });
    let path = out_dir.join("run_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&payload).expect("config serializes"))
        .map_err(|e| cineseg_core::Error::Io { path, source: e })
}
