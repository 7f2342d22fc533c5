//! Disease classification: five-class diagnosis reports with entropy-based
//! uncertainty, the stratified k-fold harness, and the features CSV format.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::forest::{rf_train, Forest, NUM_CLASSES};
use crate::rng::{derive_seed, seeded};

/// Diagnostic categories in their fixed order: normal, dilated
/// cardiomyopathy, hypertrophic cardiomyopathy, heart failure with
/// infarction, right ventricular abnormality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DiseaseClass {
    Nor,
    Dcm,
    Hcm,
    Minf,
    Rva,
}

pub const ALL_CLASSES: [DiseaseClass; NUM_CLASSES] = [
    DiseaseClass::Nor,
    DiseaseClass::Dcm,
    DiseaseClass::Hcm,
    DiseaseClass::Minf,
    DiseaseClass::Rva,
];

impl DiseaseClass {
    pub fn index(self) -> usize {
        ALL_CLASSES.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Result<Self> {
        ALL_CLASSES
            .get(i)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("class index {i} out of range")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiseaseClass::Nor => "NOR",
            DiseaseClass::Dcm => "DCM",
            DiseaseClass::Hcm => "HCM",
            DiseaseClass::Minf => "MINF",
            DiseaseClass::Rva => "RVA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_CLASSES
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown disease class '{s}'")))
    }
}

impl std::fmt::Display for DiseaseClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifier output for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    /// Posterior probability per class, in [`ALL_CLASSES`] order.
    pub posterior: [f64; NUM_CLASSES],
    pub predicted_class: DiseaseClass,
    pub entropy_nats: f64,
    /// `entropy_nats / ln(5)`, in `[0, 1]`.
    pub entropy_normalized: f64,
}

/// Shannon entropy of a distribution, in nats; `0 * ln 0 = 0`.
pub fn entropy_nats(posterior: &[f64]) -> f64 {
    posterior.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Runs the forest on one feature vector. Argmax ties resolve to the
/// earliest class in [`ALL_CLASSES`] order.
pub fn rf_predict(forest: &Forest, x: &FeatureVector) -> DiagnosisReport {
    let posterior = forest.posterior(x);
    let mut best = 0usize;
    for (i, &p) in posterior.iter().enumerate() {
        if p > posterior[best] {
            best = i;
        }
    }
    let entropy = entropy_nats(&posterior);
    DiagnosisReport {
        posterior,
        predicted_class: ALL_CLASSES[best],
        entropy_nats: entropy,
        entropy_normalized: entropy / (NUM_CLASSES as f64).ln(),
    }
}

/// Splits indices into `k` disjoint folds with per-class counts differing
/// by at most one (each fold gets `ceil(n_c/k)` or `floor(n_c/k)` members
/// of class `c`). Errors if some class has fewer than `k` members.
pub fn stratified_kfold(
    labels: &[DiseaseClass],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Invalid("fold count must be >= 1".into()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c.index()].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::Invalid(format!(
                "class {} has {} members, fewer than {k} folds",
                ALL_CLASSES[c], members.len()
            )));
        }
    }
    let mut rng = seeded(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for (i, &idx) in members.iter().enumerate() {
            folds[i % k].push(idx);
        }
    }
    for fold in folds.iter_mut() {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// One patient of a labeled cohort with its extracted features.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub patient_id: String,
    pub class: DiseaseClass,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientOutcome {
    pub patient_id: String,
    pub true_class: DiseaseClass,
    pub report: DiagnosisReport,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalOutcome {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub per_patient: Vec<PatientOutcome>,
    /// Mean feature importance over the per-fold forests.
    pub feature_importance: Vec<f64>,
}

/// Stratified k-fold cross-validation of the Random Forest stage: for each
/// fold, a forest is trained on the out-of-fold patients and evaluated on
/// the in-fold patients; the confusion matrix aggregates all folds.
pub fn cross_validate(
    cohort: &[CohortEntry],
    k: usize,
    seed: u64,
    n_trees: usize,
) -> Result<CrossvalOutcome> {
    if k < 2 {
        return Err(Error::Invalid("cross-validation needs k >= 2".into()));
    }
    let labels: Vec<DiseaseClass> = cohort.iter().map(|e| e.class).collect();
    let folds = stratified_kfold(&labels, k, seed)?;

    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut per_patient = Vec::with_capacity(cohort.len());
    let mut importance_acc = vec![0.0f64; NUM_FEATURES];

    for (f, fold) in folds.iter().enumerate() {
        let in_fold: std::collections::HashSet<usize> = fold.iter().copied().collect();
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        for (i, entry) in cohort.iter().enumerate() {
            if !in_fold.contains(&i) {
                train_x.push(entry.features);
                train_y.push(entry.class.index());
            }
        }
        if train_x.is_empty() {
            return Err(Error::EmptyInput("cross-validation training split"));
        }
        let forest = rf_train(&train_x, &train_y, n_trees, derive_seed(seed, f as u64))?;
        for imp in crate::forest::feature_importance(&forest)
            .iter()
            .zip(importance_acc.iter_mut())
        {
            *imp.1 += imp.0 / k as f64;
        }
        for &i in fold {
            let entry = &cohort[i];
            let report = rf_predict(&forest, &entry.features);
            confusion[entry.class.index()][report.predicted_class.index()] += 1;
            per_patient.push(PatientOutcome {
                patient_id: entry.patient_id.clone(),
                true_class: entry.class,
                report,
                fold: f,
            });
        }
    }
    let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    let accuracy = correct as f64 / cohort.len() as f64;
    Ok(CrossvalOutcome { confusion, accuracy, per_patient, feature_importance: importance_acc })
}

/// Writes the features CSV: `patient_id`, the 14 named feature columns,
/// then `label`.
pub fn write_features_csv(entries: &[CohortEntry], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(crate::error::io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["patient_id"];
    header.extend_from_slice(&FEATURE_NAMES);
    header.push("label");
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for entry in entries {
        let mut record = vec![entry.patient_id.clone()];
        record.extend(entry.features.values().iter().map(|v| format!("{v}")));
        record.push(entry.class.as_str().to_string());
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(crate::error::io_err(path))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<CohortEntry>> {
    let file = File::open(path).map_err(crate::error::io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    {
        let headers = r.headers().map_err(|e| csv_err(path, e))?;
        let mut expected = vec!["patient_id"];
        expected.extend_from_slice(&FEATURE_NAMES);
        expected.push("label");
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "{}: unexpected CSV header (want patient_id, the 14 feature columns, label)",
                path.display()
            )));
        }
    }
    let mut entries = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != NUM_FEATURES + 2 {
            return Err(Error::Format(format!(
                "{}: row has {} fields, expected {}",
                path.display(),
                record.len(),
                NUM_FEATURES + 2
            )));
        }
        let mut values = [0.0f64; NUM_FEATURES];
        for (v, field) in values.iter_mut().zip(record.iter().skip(1)) {
            *v = field.parse().map_err(|_| {
                Error::Format(format!("{}: non-numeric feature '{field}'", path.display()))
            })?;
        }
        entries.push(CohortEntry {
            patient_id: record[0].to_string(),
            class: DiseaseClass::parse(&record[NUM_FEATURES + 1])?,
            features: FeatureVector::new(values)?,
        });
    }
    Ok(entries)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_anchor_values() {
        let uniform = [0.2f64; 5];
        assert!((entropy_nats(&uniform) - 5.0f64.ln()).abs() < 1e-9);
        let two = [0.5, 0.5, 0.0, 0.0, 0.0];
        assert!((entropy_nats(&two) - 2.0f64.ln()).abs() < 1e-12);
        let point = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(entropy_nats(&point), 0.0);
    }

    #[test]
    fn kfold_balanced_cohort_splits_evenly() {
        // 100 samples, 20 per class, k = 4 -> 25 per fold, 5 per class.
        let labels: Vec<DiseaseClass> =
            (0..100).map(|i| ALL_CLASSES[i % NUM_CLASSES]).collect();
        let folds = stratified_kfold(&labels, 4, 7).unwrap();
        assert_eq!(folds.len(), 4);
        let mut seen = vec![false; 100];
        for fold in &folds {
            assert_eq!(fold.len(), 25);
            for class in ALL_CLASSES {
                let count = fold.iter().filter(|&&i| labels[i] == class).count();
                assert_eq!(count, 5);
            }
            for &i in fold {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kfold_k1_is_the_whole_index_set() {
        let labels = vec![DiseaseClass::Nor, DiseaseClass::Dcm, DiseaseClass::Nor];
        let folds = stratified_kfold(&labels, 1, 0).unwrap();
        assert_eq!(folds, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn kfold_uneven_classes_differ_by_at_most_one() {
        let mut labels = vec![DiseaseClass::Nor; 7];
        labels.extend(vec![DiseaseClass::Hcm; 5]);
        let folds = stratified_kfold(&labels, 3, 1).unwrap();
        for class in [DiseaseClass::Nor, DiseaseClass::Hcm] {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == class).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{class}: {counts:?}");
        }
    }

    #[test]
    fn kfold_rejects_k_above_smallest_class() {
        let labels = vec![
            DiseaseClass::Nor,
            DiseaseClass::Nor,
            DiseaseClass::Nor,
            DiseaseClass::Dcm,
            DiseaseClass::Dcm,
        ];
        assert!(stratified_kfold(&labels, 3, 0).is_err());
    }

    #[test]
    fn kfold_is_reproducible() {
        let labels: Vec<DiseaseClass> =
            (0..40).map(|i| ALL_CLASSES[i % NUM_CLASSES]).collect();
        assert_eq!(
            stratified_kfold(&labels, 4, 9).unwrap(),
            stratified_kfold(&labels, 4, 9).unwrap()
        );
    }

    fn blob_cohort(per_class: usize, seed: u64, scale: f64) -> Vec<CohortEntry> {
        use rand::Rng;
        let mut rng = seeded(seed);
        let mut out = Vec::new();
        for (ci, class) in ALL_CLASSES.iter().enumerate() {
            for i in 0..per_class {
                let mut values = [0.0f64; NUM_FEATURES];
                for (slot, v) in values.iter_mut().enumerate() {
                    *v = if slot < 3 {
                        ci as f64 * 10.0 + rng.gen::<f64>() * scale
                    } else {
                        rng.gen::<f64>()
                    };
                }
                out.push(CohortEntry {
                    patient_id: format!("{class}_{i:03}"),
                    class: *class,
                    features: FeatureVector::new(values).unwrap(),
                });
            }
        }
        out
    }

    #[test]
    fn crossval_separable_cohort_is_perfect() {
        let cohort = blob_cohort(8, 3, 1.0);
        let out = cross_validate(&cohort, 4, 11, 60).unwrap();
        assert_eq!(out.accuracy, 1.0);
        assert_eq!(out.per_patient.len(), cohort.len());
        for (i, row) in out.confusion.iter().enumerate() {
            assert_eq!(row[i], 8);
        }
    }

    #[test]
    fn crossval_shuffled_labels_is_near_chance() {
        use rand::seq::SliceRandom;
        let mut cohort = blob_cohort(8, 5, 1.0);
        let mut classes: Vec<DiseaseClass> = cohort.iter().map(|e| e.class).collect();
        classes.shuffle(&mut seeded(77));
        for (e, c) in cohort.iter_mut().zip(classes) {
            e.class = c;
        }
        let out = cross_validate(&cohort, 4, 11, 60).unwrap();
        assert!(
            (out.accuracy - 0.2).abs() <= 0.15,
            "shuffled-label accuracy {} not near chance",
            out.accuracy
        );
    }

    #[test]
    fn features_csv_round_trip() {
        let cohort = blob_cohort(2, 1, 1.0);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("features.csv");
        write_features_csv(&cohort, &path).unwrap();
        let loaded = read_features_csv(&path).unwrap();
        assert_eq!(loaded, cohort);
    }

    #[test]
    fn class_round_trip_and_order() {
        for (i, c) in ALL_CLASSES.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(DiseaseClass::parse(c.as_str()).unwrap(), *c);
            assert_eq!(DiseaseClass::from_index(i).unwrap(), *c);
        }
        assert!(DiseaseClass::parse("xyz").is_err());
    }
}
