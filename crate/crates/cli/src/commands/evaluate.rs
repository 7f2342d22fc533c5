//! `cineseg evaluate`: segmentation agreement metrics.
//!
//! Compares predicted label maps against reference studies on the resampled
//! grid. Emits a per-row CSV (`patient_id, structure, phase, dice, hd_mm`)
//! and a summary JSON with mean +/- sd per structure and phase. A Hausdorff
//! distance is undefined when either mask is empty; such rows carry an
//! empty `hd_mm` field and are excluded from the summary means.
//!
//! The summary also reports quantification agreement (automatic versus
//! reference volumes, masses and ejection fractions): Bland-Altman bias and
//! limits of agreement plus the Pearson correlation per quantity, with the
//! raw pairs in `quantities.csv` as a plottable table.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cineseg_core::metrics::{
    bland_altman, dice_coef, hausdorff_mm, pearson, quantify, StructureQuantification,
};
use cineseg_core::preprocess::resample_labels;
use cineseg_core::study_io::list_study_dirs;
use cineseg_core::volume::{LabelMap, LABEL_LV, LABEL_MYO, LABEL_RV};
use cineseg_core::{Error, Result};

use crate::report::{mean_sd, out_dir_of, write_json};

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory of predicted studies (segment output).
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of reference studies.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Summary JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-row metrics CSV path (default: metrics.csv next to --out).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

const STRUCTURES: [(u8, &str); 3] = [(LABEL_LV, "LV"), (LABEL_RV, "RV"), (LABEL_MYO, "Myo")];

#[derive(Serialize)]
struct Row {
    patient_id: String,
    structure: &'static str,
    phase: &'static str,
    dice: f64,
    hd_mm: Option<f64>,
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let pred_dirs = list_study_dirs(&args.pred)?;
    let ref_dirs = list_study_dirs(&args.reference)?;
    let names = |dirs: &[PathBuf]| -> Vec<String> {
        dirs.iter().map(|d| d.file_name().unwrap().to_string_lossy().into_owned()).collect()
    };
    let pred_names = names(&pred_dirs);
    let ref_names = names(&ref_dirs);
    if pred_names != ref_names {
        let missing_in_pred: Vec<_> =
            ref_names.iter().filter(|n| !pred_names.contains(n)).collect();
        let missing_in_ref: Vec<_> =
            pred_names.iter().filter(|n| !ref_names.contains(n)).collect();
        return Err(Error::Invalid(format!(
            "patient sets differ: missing in --pred: {missing_in_pred:?}; missing in --ref: {missing_in_ref:?}"
        )));
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut quant_pairs: Vec<(String, StructureQuantification, StructureQuantification)> =
        Vec::new();
    for (pred_dir, ref_dir) in pred_dirs.iter().zip(&ref_dirs) {
        let pred = cineseg_core::study_io::load_study::<f32>(pred_dir)?;
        let reference = cineseg_core::study_io::load_study::<f32>(ref_dir)?;
        let (pred_ed, pred_es) = pred.reference_labels.as_ref().ok_or_else(|| {
            Error::Invalid(format!("prediction {} has no label maps", pred.patient_id))
        })?;
        let (ref_ed, ref_es) = reference.reference_labels.as_ref().ok_or_else(|| {
            Error::Invalid(format!("reference {} has no label maps", reference.patient_id))
        })?;

        // Bring the references onto the prediction grid (in-plane spacing
        // of the predictions is the resampling target).
        let target = pred_ed.spacing_mm()[1];
        let ref_ed = resample_labels(ref_ed, target)?;
        let ref_es = resample_labels(ref_es, target)?;
        for (labels_pred, labels_ref, phase) in
            [(pred_ed, &ref_ed, "ed"), (pred_es, &ref_es, "es")]
        {
            if labels_pred.dims() != labels_ref.dims() {
                return Err(Error::Invalid(format!(
                    "{}: prediction grid {:?} does not match resampled reference {:?}",
                    pred.patient_id,
                    labels_pred.dims(),
                    labels_ref.dims()
                )));
            }
            for (class, structure) in STRUCTURES {
                rows.push(evaluate_structure(
                    &pred.patient_id,
                    labels_pred,
                    labels_ref,
                    class,
                    structure,
                    phase,
                )?);
            }
        }

        // Quantification agreement; patients where a ventricle is empty in
        // either source are skipped (their EF is undefined).
        if let (Ok(q_ref), Ok(q_pred)) = (quantify(&ref_ed, &ref_es), quantify(pred_ed, pred_es))
        {
            quant_pairs.push((pred.patient_id.clone(), q_ref, q_pred));
        }
    }

    let csv_path = args.csv.clone().unwrap_or_else(|| out_dir_of(&args.out).join("metrics.csv"));
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&csv_path)
            .map_err(|e| Error::Io { path: csv_path.clone(), source: e })?,
    );
    writeln!(csv, "patient_id,structure,phase,dice,hd_mm").map_err(|e| Error::Io {
        path: csv_path.clone(),
        source: e,
    })?;
    for row in &rows {
        let hd = row.hd_mm.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{},{}", row.patient_id, row.structure, row.phase, row.dice, hd)
            .map_err(|e| Error::Io { path: csv_path.clone(), source: e })?;
    }
    csv.flush().map_err(|e| Error::Io { path: csv_path.clone(), source: e })?;

    // Summary: per structure, per phase and pooled over phases.
    let mut summary = BTreeMap::new();
    for (_, structure) in STRUCTURES {
        let mut per_phase = BTreeMap::new();
        for phase in ["ed", "es", "total"] {
            let select: Vec<&Row> = rows
                .iter()
                .filter(|r| r.structure == structure && (phase == "total" || r.phase == phase))
                .collect();
            let dice: Vec<f64> = select.iter().map(|r| r.dice).collect();
            let hd: Vec<f64> = select.iter().filter_map(|r| r.hd_mm).collect();
            let (dice_mean, dice_sd) = mean_sd(&dice);
            let (hd_mean, hd_sd) = mean_sd(&hd);
            per_phase.insert(
                phase,
                serde_json::json!({
                    "dice_mean": dice_mean,
                    "dice_sd": dice_sd,
                    "hd_mm_mean": if hd.is_empty() { None } else { Some(hd_mean) },
                    "hd_mm_sd": if hd.is_empty() { None } else { Some(hd_sd) },
                    "n": select.len(),
                    "n_hd_defined": hd.len(),
                }),
            );
        }
        summary.insert(structure, per_phase);
    }
    write_json(
        &serde_json::json!({
            "patients": pred_names,
            "structures": summary,
            "csv": csv_path.display().to_string(),
        }),
        &args.out,
    )?;
    crate::write_run_config("evaluate", &args, &out_dir_of(&args.out))?;
    println!("evaluated {} patients; summary in {}", pred_names.len(), args.out.display());
    Ok(())
}

fn evaluate_structure(
    patient_id: &str,
    pred: &LabelMap,
    reference: &LabelMap,
    class: u8,
    structure: &'static str,
    phase: &'static str,
) -> Result<Row> {
    let mask_pred = pred.mask(class);
    let mask_ref = reference.mask(class);
    let dice = dice_coef(&mask_pred, &mask_ref);
    let hd_mm = match hausdorff_mm(&mask_pred, &mask_ref, pred.dims(), pred.spacing_mm()) {
        Ok(v) => Some(v),
        Err(Error::EmptyMask { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Row { patient_id: patient_id.to_string(), structure, phase, dice, hd_mm })
}
