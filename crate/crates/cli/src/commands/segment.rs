//! `cineseg segment`: ensemble segmentation of whole studies.
//!
//! Each prediction is written as a full study directory on the resampled
//! grid: the preprocessed ED/ES volumes plus the predicted label maps. With
//! `--dump-probs` the averaged per-class probability volumes are stored as
//! raw rasters (`probs_ed.raw`, `probs_es.raw`, 4 channels per slice,
//! little-endian f32) with a JSON sidecar describing their shape.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::infer::segment_study_with_probs;
use cineseg_core::preprocess::preprocess_study;
use cineseg_core::study_io::save_study;
use cineseg_core::volume::CineStudy;
use cineseg_core::{Error, Result};

use crate::report::{write_json, TRUTH_FILE};

use super::{load_ensemble, load_studies};

#[derive(Args, Serialize)]
pub struct SegmentArgs {
    /// Directory containing the snapshot ensemble (*.snap).
    #[arg(long)]
    pub model_dir: PathBuf,
    /// Directory of input studies.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for predicted studies.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-voxel class probability rasters.
    #[arg(long, default_value_t = false)]
    pub dump_probs: bool,
    /// In-plane resampling target in mm.
    #[arg(long, default_value_t = 1.4)]
    pub target_mm: f64,
}

pub fn run(args: SegmentArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Io { path: args.out.clone(), source: e })?;
    let snapshots = load_ensemble(&args.model_dir)?;
    let studies = load_studies(&args.data)?;

    for (src_dir, study) in &studies {
        let prepped = preprocess_study(study, args.target_mm)?;
        let (labels_ed, labels_es, probs_ed, probs_es) =
            segment_study_with_probs(&snapshots, &prepped)?;

        let out_dir = args.out.join(&study.patient_id);
        let predicted = CineStudy::new(
            prepped.patient_id.clone(),
            prepped.ed.clone(),
            prepped.es.clone(),
            prepped.weight_kg,
            prepped.height_cm,
            Some((labels_ed, labels_es)),
        )?;
        save_study(&predicted, &out_dir)?;

        // Keep the class/geometry sidecar with the prediction when the
        // source study has one.
        let truth_src = src_dir.join(TRUTH_FILE);
        if truth_src.is_file() {
            std::fs::copy(&truth_src, out_dir.join(TRUTH_FILE))
                .map_err(|e| Error::Io { path: truth_src.clone(), source: e })?;
        }

        if args.dump_probs {
            for (name, probs) in [("probs_ed", &probs_ed), ("probs_es", &probs_es)] {
                let raw_path = out_dir.join(format!("{name}.raw"));
                let mut bytes = Vec::with_capacity(probs.data().len() * 4);
                for v in probs.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                std::fs::write(&raw_path, bytes)
                    .map_err(|e| Error::Io { path: raw_path, source: e })?;
            }
            let [ns, rows, cols] = probs_ed.dims();
            write_json(
                &serde_json::json!({
                    "order": "[slice, class, row, col]",
                    "classes": ["BG", "RV", "Myo", "LV"],
                    "shape": [ns, 4, rows, cols],
                    "dtype": "f32-le",
                    "files": {"ed": "probs_ed.raw", "es": "probs_es.raw"},
                }),
                &out_dir.join("probs_meta.json"),
            )?;
        }
    }
    crate::write_run_config("segment", &args, &args.out)?;
    println!(
        "segmented {} studies with {} snapshots into {}",
        studies.len(),
        snapshots.len(),
        args.out.display()
    );
    Ok(())
}
