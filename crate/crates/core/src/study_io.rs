//! On-disk study format.
//!
//! A study is a directory containing `meta.json` plus raw rasters:
//!
//! ```text
//! study/
//!   meta.json        format_version, patient metadata, per-phase blocks
//!   ed.raw           little-endian f32, C order [slice, row, col]
//!   es.raw
//!   ed_labels.raw    optional, u8, same order
//!   es_labels.raw
//! ```
//!
//! Each per-phase block in `meta.json` declares `shape [slices, rows, cols]`,
//! `spacing_mm [z, y, x]` and the raw filenames, so a directory is fully
//! self-describing. Raster values are stored in 32-bit precision regardless
//! of the in-memory element type; for `f32` pipelines a save/load round trip
//! is bit-exact.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;
use crate::volume::{CineStudy, CineVolume, LabelMap, Phase};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct StudyMeta {
    pub format_version: u32,
    pub patient_id: String,
    pub weight_kg: f64,
    pub height_cm: f64,
    pub ed: PhaseMeta,
    pub es: PhaseMeta,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PhaseMeta {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub raw: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

/// Loads and validates a study directory.
pub fn load_study<T: Scalar>(dir: &Path) -> Result<CineStudy<T>> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: StudyMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: meta_path.clone(),
        message: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported study format_version {} in {} (expected {FORMAT_VERSION})",
            meta.format_version,
            meta_path.display()
        )));
    }

    let ed = load_phase::<T>(dir, &meta.ed, Phase::Ed)?;
    let es = load_phase::<T>(dir, &meta.es, Phase::Es)?;
    let labels = match (&meta.ed.labels, &meta.es.labels) {
        (Some(led), Some(les)) => Some((
            load_label_raw(&dir.join(led), meta.ed.shape, meta.ed.spacing_mm)?,
            load_label_raw(&dir.join(les), meta.es.shape, meta.es.spacing_mm)?,
        )),
        (None, None) => None,
        _ => {
            return Err(Error::Format(format!(
                "{}: label files must be present for both phases or neither",
                meta_path.display()
            )))
        }
    };

    CineStudy::new(meta.patient_id, ed, es, meta.weight_kg, meta.height_cm, labels)
}

/// Writes a study directory (creating it if needed).
pub fn save_study<T: Scalar>(study: &CineStudy<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let has_labels = study.reference_labels.is_some();
    let meta = StudyMeta {
        format_version: FORMAT_VERSION,
        patient_id: study.patient_id.clone(),
        weight_kg: study.weight_kg,
        height_cm: study.height_cm,
        ed: phase_meta(&study.ed, "ed", has_labels),
        es: phase_meta(&study.es, "es", has_labels),
    };

    save_volume_raw(&study.ed, &dir.join(&meta.ed.raw))?;
    save_volume_raw(&study.es, &dir.join(&meta.es.raw))?;
    if let Some((led, les)) = &study.reference_labels {
        save_label_raw(led, &dir.join(meta.ed.labels.as_ref().unwrap()))?;
        save_label_raw(les, &dir.join(meta.es.labels.as_ref().unwrap()))?;
    }

    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text).map_err(io_err(&meta_path))
}

/// All immediate subdirectories of `root` containing a `meta.json`, sorted
/// by name for reproducible traversal order.
pub fn list_study_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if path.is_dir() && path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn phase_meta<T: Scalar>(vol: &CineVolume<T>, stem: &str, labels: bool) -> PhaseMeta {
    PhaseMeta {
        shape: vol.dims(),
        spacing_mm: vol.spacing_mm(),
        raw: format!("{stem}.raw"),
        labels: labels.then(|| format!("{stem}_labels.raw")),
    }
}

fn load_phase<T: Scalar>(dir: &Path, meta: &PhaseMeta, phase: Phase) -> Result<CineVolume<T>> {
    let path = dir.join(&meta.raw);
    let n: usize = meta.shape.iter().product();
    let bytes = read_exact_file(&path, n as u64 * 4)?;
    let mut reader = &bytes[..];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = reader.read_f32::<LittleEndian>().map_err(io_err(&path))?;
        data.push(T::from_f64_s(v as f64));
    }
    CineVolume::new(phase, meta.shape, meta.spacing_mm, data)
}

fn load_label_raw(path: &Path, shape: [usize; 3], spacing_mm: [f64; 3]) -> Result<LabelMap> {
    let n: usize = shape.iter().product();
    let bytes = read_exact_file(path, n as u64)?;
    LabelMap::new(shape, spacing_mm, bytes)
}

fn read_exact_file(path: &Path, expected: u64) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(io_err(path))?;
    let actual = file.metadata().map_err(io_err(path))?.len();
    if actual != expected {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, actual });
    }
    let mut bytes = Vec::with_capacity(expected as usize);
    BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(path))?;
    Ok(bytes)
}

fn save_volume_raw<T: Scalar>(vol: &CineVolume<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for v in vol.data() {
        w.write_f32::<LittleEndian>(v.to_f64_s() as f32).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn save_label_raw(labels: &LabelMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(labels.labels()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_slice_study() -> CineStudy<f32> {
        let dims = [2, 3, 4];
        let spacing = [8.0, 1.5, 1.5];
        let n = 24;
        let ed_data: Vec<f32> = (0..n).map(|i| i as f32 * 0.5 - 3.0).collect();
        let es_data: Vec<f32> = (0..n).map(|i| (i * i % 17) as f32).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 4) as u8).collect();
        CineStudy::new(
            "patient_007".into(),
            CineVolume::new(Phase::Ed, dims, spacing, ed_data).unwrap(),
            CineVolume::new(Phase::Es, dims, spacing, es_data).unwrap(),
            72.5,
            181.0,
            Some((
                LabelMap::new(dims, spacing, labels.clone()).unwrap(),
                LabelMap::new(dims, spacing, labels).unwrap(),
            )),
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let study = two_slice_study();
        save_study(&study, tmp.path()).unwrap();
        let loaded = load_study::<f32>(tmp.path()).unwrap();
        assert_eq!(loaded.patient_id, study.patient_id);
        assert_eq!(loaded.ed.data(), study.ed.data());
        assert_eq!(loaded.es.data(), study.es.data());
        assert_eq!(loaded.ed.spacing_mm(), study.ed.spacing_mm());
        let (l_ed, _) = loaded.reference_labels.as_ref().unwrap();
        let (s_ed, _) = study.reference_labels.as_ref().unwrap();
        assert_eq!(l_ed.labels(), s_ed.labels());
    }

    #[test]
    fn short_raw_file_is_a_size_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        save_study(&two_slice_study(), tmp.path()).unwrap();
        let raw = tmp.path().join("ed.raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 1]).unwrap();
        match load_study::<f32>(tmp.path()) {
            Err(Error::SizeMismatch { expected, actual, .. }) => {
                assert_eq!(expected, actual + 1);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn invalid_label_value_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        save_study(&two_slice_study(), tmp.path()).unwrap();
        let raw = tmp.path().join("es_labels.raw");
        let mut bytes = fs::read(&raw).unwrap();
        bytes[5] = 4;
        fs::write(&raw, &bytes).unwrap();
        match load_study::<f32>(tmp.path()) {
            Err(Error::InvalidLabel { value: 4, index: 5 }) => {}
            other => panic!("expected invalid label, got {other:?}"),
        }
    }

    #[test]
    fn missing_meta_is_an_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_study::<f32>(tmp.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn list_study_dirs_is_sorted() {
        let tmp = tempfile::tempdir().unwrap();
        for name in ["b_study", "a_study", "not_a_study"] {
            fs::create_dir(tmp.path().join(name)).unwrap();
        }
        save_study(&two_slice_study(), &tmp.path().join("b_study")).unwrap();
        save_study(&two_slice_study(), &tmp.path().join("a_study")).unwrap();
        let dirs = list_study_dirs(tmp.path()).unwrap();
        let names: Vec<_> =
            dirs.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, ["a_study", "b_study"]);
    }
}
