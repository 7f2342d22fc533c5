//! Synthetic labeled studies.
//!
//! Each slice holds a bright LV disk inside a mid-gray myocardial annulus
//! with a bright RV half-ring hugging the annulus, on a dark background
//! plus Gaussian noise. Radii scale per slice with an elliptic taper, and
//! the ES geometry shrinks the LV radius by `sqrt(1 - EF/100)`, so every
//! volume, ejection fraction and volume ratio has a closed analytic value.
//!
//! Five presets mimic the qualitative class separations used for diagnosis:
//! DCM (dilated LV, low EF, thin wall), HCM (thick wall), MINF (moderately
//! reduced EF), RVA (enlarged RV), and NOR. The geometry bands are invented
//! for separability, not clinical realism.

use rand::Rng;

use crate::diagnosis::DiseaseClass;
use crate::error::{Error, Result};
use crate::rng::{self, Prng};
use crate::scalar::Scalar;
use crate::volume::{CineStudy, CineVolume, LabelMap, Phase, LABEL_BG, LABEL_LV, LABEL_MYO, LABEL_RV};

/// Intensity levels before normalization.
pub const INTENSITY_BG: f64 = 0.1;
pub const INTENSITY_MYO: f64 = 0.4;
pub const INTENSITY_CAVITY: f64 = 0.8;
pub const DEFAULT_NOISE_SD: f64 = 0.05;

/// The RV half-ring spans this angle.
const RV_SECTOR_RAD: f64 = std::f64::consts::PI;

/// Inclusive sampling range.
pub type Range = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomPreset {
    pub class: DiseaseClass,
    /// LV cavity radius at ED, mm.
    pub lv_radius_ed_mm: Range,
    /// LV ejection fraction target band, percent.
    pub lv_ef_pct: Range,
    /// Myocardial wall thickness at ED, mm.
    pub myo_thickness_ed_mm: Range,
    /// Multiplier taking ED wall thickness to ES (systolic thickening).
    pub myo_es_thickening: Range,
    /// RV/LV volume ratio at ED.
    pub rv_lv_ratio_ed: Range,
    /// RV ejection fraction target band, percent.
    pub rv_ef_pct: Range,
    pub weight_kg: Range,
    pub height_cm: Range,
    pub noise_sd: f64,
    pub slices: usize,
    /// Voxel spacing (z, y, x) in mm.
    pub spacing_mm: [f64; 3],
    /// In-plane grid side (rows = cols).
    pub grid: usize,
    /// LV center jitter around the grid center, mm.
    pub center_jitter_mm: f64,
}

impl PhantomPreset {
    pub fn for_class(class: DiseaseClass) -> Self {
        let base = |lv_radius_ed_mm, lv_ef_pct, myo_thickness_ed_mm, rv_lv_ratio_ed, rv_ef_pct| {
            PhantomPreset {
                class,
                lv_radius_ed_mm,
                lv_ef_pct,
                myo_thickness_ed_mm,
                myo_es_thickening: (1.08, 1.15),
                rv_lv_ratio_ed,
                rv_ef_pct,
                weight_kg: (55.0, 95.0),
                height_cm: (155.0, 190.0),
                noise_sd: DEFAULT_NOISE_SD,
                slices: 8,
                spacing_mm: [8.0, 1.4, 1.4],
                grid: 96,
                center_jitter_mm: 4.0,
            }
        };
        match class {
            DiseaseClass::Nor => base((19.0, 24.0), (57.0, 68.0), (6.8, 8.5), (0.40, 0.65), (45.0, 65.0)),
            DiseaseClass::Dcm => base((25.5, 29.0), (18.0, 30.0), (4.3, 5.5), (0.25, 0.48), (20.0, 35.0)),
            DiseaseClass::Hcm => base((15.3, 18.7), (58.0, 70.0), (12.8, 15.3), (0.40, 0.65), (45.0, 65.0)),
            DiseaseClass::Minf => base((20.4, 25.5), (32.0, 45.0), (6.8, 9.4), (0.40, 0.65), (35.0, 55.0)),
            DiseaseClass::Rva => base((17.0, 22.1), (55.0, 68.0), (6.8, 9.4), (1.25, 1.75), (20.0, 40.0)),
        }
    }

    fn validate(&self) -> Result<()> {
        let ranges = [
            ("lv_radius_ed_mm", self.lv_radius_ed_mm),
            ("lv_ef_pct", self.lv_ef_pct),
            ("myo_thickness_ed_mm", self.myo_thickness_ed_mm),
            ("myo_es_thickening", self.myo_es_thickening),
            ("rv_lv_ratio_ed", self.rv_lv_ratio_ed),
            ("rv_ef_pct", self.rv_ef_pct),
            ("weight_kg", self.weight_kg),
            ("height_cm", self.height_cm),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid(format!("preset range {name} is inconsistent: ({lo}, {hi})")));
            }
        }
        if self.lv_radius_ed_mm.0 <= 0.0
            || self.myo_thickness_ed_mm.0 <= 0.0
            || self.rv_lv_ratio_ed.0 <= 0.0
            || self.myo_es_thickening.0 <= 0.0
        {
            return Err(Error::Invalid("preset lengths and ratios must be positive".into()));
        }
        if !(0.0..100.0).contains(&self.lv_ef_pct.0) || !(0.0..100.0).contains(&self.lv_ef_pct.1) {
            return Err(Error::Invalid("LV EF band must lie in [0, 100)".into()));
        }
        if !(0.0..100.0).contains(&self.rv_ef_pct.0) || !(0.0..100.0).contains(&self.rv_ef_pct.1) {
            return Err(Error::Invalid("RV EF band must lie in [0, 100)".into()));
        }
        if self.slices == 0 || self.grid == 0 {
            return Err(Error::Invalid("preset needs at least one slice and voxel".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Invalid("noise sd must be >= 0".into()));
        }
        // The widest sampled heart must fit the grid with its jitter.
        let r1 = self.lv_radius_ed_mm.1 + self.myo_thickness_ed_mm.1;
        let a_rv = self.rv_lv_ratio_ed.1 * std::f64::consts::PI * self.lv_radius_ed_mm.1.powi(2);
        let outer = (r1 * r1 + 2.0 * a_rv / RV_SECTOR_RAD).sqrt() + self.center_jitter_mm;
        let half_extent = self.grid as f64 * self.spacing_mm[1].min(self.spacing_mm[2]) / 2.0;
        if outer >= half_extent {
            return Err(Error::Invalid(format!(
                "preset geometry (outer radius {outer:.1} mm) exceeds the {half_extent:.1} mm grid half-extent"
            )));
        }
        Ok(())
    }
}

/// Exact analytic geometry of one generated study.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomTruth {
    pub class: DiseaseClass,
    pub lv_edv_ml: f64,
    pub lv_esv_ml: f64,
    pub rv_edv_ml: f64,
    pub rv_esv_ml: f64,
    pub myo_edv_ml: f64,
    pub myo_esv_ml: f64,
    pub lv_ef_pct: f64,
    pub rv_ef_pct: f64,
    pub rv_lv_ratio_ed: f64,
    pub rv_lv_ratio_es: f64,
    pub myo_lv_ratio_ed: f64,
    pub myo_lv_ratio_es: f64,
}

/// A generated study with its ground truth.
#[derive(Debug, Clone)]
pub struct PhantomStudy<T> {
    pub study: CineStudy<T>,
    pub truth: PhantomTruth,
}

struct PhaseGeometry {
    lv_radius: f64,
    myo_outer: f64,
    rv_outer: f64,
    lv_area: f64,
    myo_area: f64,
    rv_area: f64,
}

fn phase_geometry(lv_radius: f64, thickness: f64, rv_area: f64) -> PhaseGeometry {
    let myo_outer = lv_radius + thickness;
    let rv_outer = (myo_outer * myo_outer + 2.0 * rv_area / RV_SECTOR_RAD).sqrt();
    let pi = std::f64::consts::PI;
    PhaseGeometry {
        lv_radius,
        myo_outer,
        rv_outer,
        lv_area: pi * lv_radius * lv_radius,
        myo_area: pi * (myo_outer * myo_outer - lv_radius * lv_radius),
        rv_area,
    }
}

fn sample(rng: &mut Prng, (lo, hi): Range) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Per-slice radius multiplier: elliptic taper from 1.0 mid-stack to 0.75
/// at the outermost slices.
fn taper(z: usize, slices: usize) -> f64 {
    let u = 2.0 * (z as f64 + 0.5) / slices as f64 - 1.0;
    (1.0 - 0.44 * u * u).sqrt()
}

/// Generates one study with reference labels and its analytic truth.
pub fn generate_study<T: Scalar>(
    preset: &PhantomPreset,
    patient_id: &str,
    rng: &mut Prng,
) -> Result<PhantomStudy<T>> {
    preset.validate()?;
    let pi = std::f64::consts::PI;

    let lv_r_ed = sample(rng, preset.lv_radius_ed_mm);
    let lv_ef = sample(rng, preset.lv_ef_pct);
    let t_ed = sample(rng, preset.myo_thickness_ed_mm);
    let thickening = sample(rng, preset.myo_es_thickening);
    let rv_ratio_ed = sample(rng, preset.rv_lv_ratio_ed);
    let rv_ef = sample(rng, preset.rv_ef_pct);
    let weight_kg = sample(rng, preset.weight_kg);
    let height_cm = sample(rng, preset.height_cm);
    let jitter = preset.center_jitter_mm;
    let cy = sample(rng, (-jitter, jitter));
    let cx = sample(rng, (-jitter, jitter));
    // RV half-ring orientation: leftward of the LV, with jitter.
    let sector_start = pi / 2.0 + sample(rng, (-0.3, 0.3));

    let shrink = (1.0 - lv_ef / 100.0).sqrt();
    let lv_r_es = lv_r_ed * shrink;
    let t_es = t_ed * thickening;
    let rv_area_ed = rv_ratio_ed * pi * lv_r_ed * lv_r_ed;
    let rv_area_es = rv_area_ed * (1.0 - rv_ef / 100.0);

    let ed_geo = phase_geometry(lv_r_ed, t_ed, rv_area_ed);
    let es_geo = phase_geometry(lv_r_es, t_es, rv_area_es);

    let [sz, sy, sx] = preset.spacing_mm;
    let n = preset.grid;
    let center_y = n as f64 * sy / 2.0 + cy;
    let center_x = n as f64 * sx / 2.0 + cx;

    let truth_area = |geo: &PhaseGeometry| {
        // Sum of per-slice areas scaled by the squared taper, in mm^2.
        let taper_sq: f64 = (0..preset.slices).map(|z| taper(z, preset.slices).powi(2)).sum();
        [geo.lv_area * taper_sq, geo.myo_area * taper_sq, geo.rv_area * taper_sq]
    };
    let [lv_a_ed, myo_a_ed, rv_a_ed] = truth_area(&ed_geo);
    let [lv_a_es, myo_a_es, rv_a_es] = truth_area(&es_geo);
    let to_ml = sz / 1000.0;

    let truth = PhantomTruth {
        class: preset.class,
        lv_edv_ml: lv_a_ed * to_ml,
        lv_esv_ml: lv_a_es * to_ml,
        rv_edv_ml: rv_a_ed * to_ml,
        rv_esv_ml: rv_a_es * to_ml,
        myo_edv_ml: myo_a_ed * to_ml,
        myo_esv_ml: myo_a_es * to_ml,
        lv_ef_pct: lv_ef,
        rv_ef_pct: rv_ef,
        rv_lv_ratio_ed: rv_a_ed / lv_a_ed,
        rv_lv_ratio_es: rv_a_es / lv_a_es,
        myo_lv_ratio_ed: myo_a_ed / lv_a_ed,
        myo_lv_ratio_es: myo_a_es / lv_a_es,
    };

    let mut render = |geo: &PhaseGeometry, phase: Phase| -> Result<(CineVolume<T>, LabelMap)> {
        let mut data = Vec::with_capacity(preset.slices * n * n);
        let mut labels = Vec::with_capacity(preset.slices * n * n);
        for z in 0..preset.slices {
            let f = taper(z, preset.slices);
            let (r_lv, r_myo, r_rv) = (geo.lv_radius * f, geo.myo_outer * f, geo.rv_outer * f);
            for y in 0..n {
                let dy = (y as f64 + 0.5) * sy - center_y;
                for x in 0..n {
                    let dx = (x as f64 + 0.5) * sx - center_x;
                    let dist = (dy * dy + dx * dx).sqrt();
                    let label = if dist < r_lv {
                        LABEL_LV
                    } else if dist < r_myo {
                        LABEL_MYO
                    } else if dist < r_rv && in_sector(dy, dx, sector_start) {
                        LABEL_RV
                    } else {
                        LABEL_BG
                    };
                    let level = match label {
                        LABEL_LV | LABEL_RV => INTENSITY_CAVITY,
                        LABEL_MYO => INTENSITY_MYO,
                        _ => INTENSITY_BG,
                    };
                    let noise = if preset.noise_sd > 0.0 {
                        preset.noise_sd * rng::normal(rng)
                    } else {
                        0.0
                    };
                    data.push(T::from_f64_s(level + noise));
                    labels.push(label);
                }
            }
        }
        let dims = [preset.slices, n, n];
        Ok((
            CineVolume::new(phase, dims, preset.spacing_mm, data)?,
            LabelMap::new(dims, preset.spacing_mm, labels)?,
        ))
    };

    let (ed_vol, ed_labels) = render(&ed_geo, Phase::Ed)?;
    let (es_vol, es_labels) = render(&es_geo, Phase::Es)?;

    let study = CineStudy::new(
        patient_id.to_string(),
        ed_vol,
        es_vol,
        weight_kg,
        height_cm,
        Some((ed_labels, es_labels)),
    )?;
    Ok(PhantomStudy { study, truth })
}

#[inline]
fn in_sector(dy: f64, dx: f64, sector_start: f64) -> bool {
    let tau = std::f64::consts::TAU;
    let angle = dy.atan2(dx);
    ((angle - sector_start).rem_euclid(tau)) < RV_SECTOR_RAD
}

/// Generates `n_per_class` studies for each of the five presets. Patient
/// ids follow `<CLASS>_<index>`; per-study seeds derive from the master
/// seed, so any cohort prefix is reproducible.
pub fn generate_cohort<T: Scalar>(
    n_per_class: usize,
    master_seed: u64,
) -> Result<Vec<PhantomStudy<T>>> {
    let mut out = Vec::with_capacity(5 * n_per_class);
    for (ci, class) in crate::diagnosis::ALL_CLASSES.iter().enumerate() {
        let preset = PhantomPreset::for_class(*class);
        for i in 0..n_per_class {
            let mut rng = rng::seeded(rng::derive_seed(master_seed, (ci * 1_000_000 + i) as u64));
            let id = format!("{class}_{i:03}");
            out.push(generate_study(&preset, &id, &mut rng)?);
        }
    }
    Ok(out)
}
