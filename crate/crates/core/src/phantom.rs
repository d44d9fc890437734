//! Deterministic synthetic cases: an elliptical skull around 30 HU
//! parenchyma with one hyperdense lesion whose location and shape depend on
//! the etiology, plus clinical fields sampled at class-dependent rates.

use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{apportion, CaseRecord, Manifest, Sex};
use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};
use crate::seed;
use crate::volume::{to_hu, write_volume, BrainMask, Volume, AIR_HU};

pub const PARENCHYMA_HU: f64 = 30.0;
pub const BONE_HU: f64 = 1000.0;
pub const MIN_PHANTOM_EXTENT: usize = 16;

/// Desk-scale grid: 64 x 64 x 16 voxels whose physical extent matches the
/// 280 x 280 x 30 grid at 0.6 x 0.6 x 4.2 mm.
pub const DESK_DIMS: [usize; 3] = [64, 64, 16];
pub const DESK_SPACING_MM: [f64; 3] = [2.625, 2.625, 7.875];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub noise_hu: f64,
}

impl Default for PhantomGeometry {
    fn default() -> Self {
        PhantomGeometry {
            dims: DESK_DIMS,
            spacing_mm: DESK_SPACING_MM,
            noise_hu: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub etiology: Etiology,
    pub seed: u64,
    pub geometry: PhantomGeometry,
}

/// Lesion building blocks in normalized brain coordinates, where the
/// parenchyma is the unit ball.
#[derive(Debug, Clone, Copy)]
enum Lesion {
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    /// Radial band `inner..outer` restricted to `z < z_max`.
    BasalLayer { inner: f64, outer: f64, z_max: f64 },
}

impl Lesion {
    fn contains(&self, q: [f64; 3]) -> bool {
        match *self {
            Lesion::Ellipsoid { center, radii } => {
                (0..3).map(|k| ((q[k] - center[k]) / radii[k]).powi(2)).sum::<f64>() <= 1.0
            }
            Lesion::BasalLayer { inner, outer, z_max } => {
                let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                q[2] < z_max && r >= inner && r <= outer
            }
        }
    }
}

fn polar(radius: f64, angle: f64, z: f64) -> [f64; 3] {
    [radius * angle.cos(), radius * angle.sin(), z]
}

fn sphere(center: [f64; 3], r: f64) -> Lesion {
    Lesion::Ellipsoid {
        center,
        radii: [r, r, r * 1.6],
    }
}

fn signature(etiology: Etiology, rng: &mut ChaCha8Rng) -> Vec<Lesion> {
    let tau = std::f64::consts::TAU;
    match etiology {
        Etiology::Hypertensive => {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let s = rng.random_range(0.9..1.2);
            vec![Lesion::Ellipsoid {
                center: [
                    side * rng.random_range(0.22..0.34),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.15),
                ],
                radii: [0.3 * s, 0.24 * s, 0.45 * s],
            }]
        }
        Etiology::Aneurysm => {
            let inner = rng.random_range(0.76..0.8);
            vec![Lesion::BasalLayer {
                inner,
                outer: inner + rng.random_range(0.16..0.2),
                z_max: rng.random_range(-0.25..-0.1),
            }]
        }
        Etiology::Avm => {
            let angle = rng.random_range(0.0..tau);
            let radius = rng.random_range(0.5..0.62);
            let z = rng.random_range(-0.15..0.35);
            let mut parts = vec![sphere(polar(radius, angle, z), rng.random_range(0.2..0.24))];
            // Serpentine draining tail running inward from the nidus.
            let phase = rng.random_range(0.0..tau);
            for i in 1..=7 {
                let t = i as f64 / 7.0;
                let wiggle = 0.35 * (phase + 3.0 * t * tau / 2.0).sin();
                parts.push(sphere(polar(radius * (1.0 - 0.75 * t), angle + wiggle, z), 0.09));
            }
            parts
        }
        Etiology::Mmd => {
            // Casts of both lateral ventricles either side of the midline.
            let offset = rng.random_range(0.1..0.14);
            let y = rng.random_range(-0.08..0.08);
            let z = rng.random_range(0.05..0.25);
            [-1.0, 1.0]
                .map(|side| Lesion::Ellipsoid {
                    center: [side * offset, y, z],
                    radii: [0.08, 0.32, 0.35],
                })
                .to_vec()
        }
        Etiology::Cm => {
            let center = polar(
                rng.random_range(0.2..0.6),
                rng.random_range(0.0..tau),
                rng.random_range(-0.3..0.4),
            );
            vec![sphere(center, rng.random_range(0.11..0.14))]
        }
        Etiology::Others => {
            let center = polar(
                rng.random_range(0.68..0.75),
                rng.random_range(0.0..tau),
                rng.random_range(-0.1..0.4),
            );
            vec![sphere(center, rng.random_range(0.28..0.32))]
        }
    }
}

struct ClinicalRates {
    age_mean: f64,
    female: f64,
    hypertension: f64,
    coagulopathy: f64,
    complaint: &'static str,
}

const COMPLAINTS: [&str; 6] = [
    "sudden severe headache",
    "hemiparesis",
    "seizure",
    "headache and vomiting",
    "focal numbness",
    "altered consciousness",
];

fn clinical_rates(e: Etiology) -> ClinicalRates {
    let (age_mean, female, hypertension, coagulopathy, complaint) = match e {
        Etiology::Aneurysm => (55.0, 0.55, 0.35, 0.02, COMPLAINTS[0]),
        Etiology::Hypertensive => (58.0, 0.35, 0.85, 0.05, COMPLAINTS[1]),
        Etiology::Avm => (30.0, 0.45, 0.10, 0.02, COMPLAINTS[2]),
        Etiology::Mmd => (40.0, 0.55, 0.25, 0.02, COMPLAINTS[3]),
        Etiology::Cm => (38.0, 0.50, 0.10, 0.02, COMPLAINTS[4]),
        Etiology::Others => (52.0, 0.40, 0.30, 0.25, COMPLAINTS[5]),
    };
    ClinicalRates {
        age_mean,
        female,
        hypertension,
        coagulopathy,
        complaint,
    }
}

/// Generates one case. The returned record has an id derived from the seed
/// and an empty volume path; cohort generation fills both in.
pub fn generate_case(spec: &PhantomSpec) -> Result<(Volume, BrainMask, CaseRecord)> {
    let PhantomGeometry {
        dims,
        spacing_mm,
        noise_hu,
    } = spec.geometry;
    if dims.iter().any(|&d| d < MIN_PHANTOM_EXTENT) {
        return Err(Error::Geometry(format!(
            "phantom needs at least {MIN_PHANTOM_EXTENT} voxels per axis to hold a skull, got {dims:?}"
        )));
    }
    if !(noise_hu.is_finite() && noise_hu >= 0.0) {
        return Err(Error::invalid(format!("noise_hu must be >= 0, got {noise_hu}")));
    }

    let mut rng = seed::rng(spec.seed);
    let n = dims.map(|d| d as f64);
    let scale = 1.0;
    let center = [
        (n[0] - 1.0) / 2.0 + rng.random_range(-0.005..0.005) * n[0],
        (n[1] - 1.0) / 2.0 + rng.random_range(-0.005..0.005) * n[1],
        (n[2] - 1.0) / 2.0,
    ];
    let outer = [0.44 * n[0] * scale, 0.47 * n[1] * scale, 0.5 * n[2]];
    let thickness = [(0.05 * n[0]).max(2.0), (0.05 * n[1]).max(2.0), 1.0];
    let inner = [0, 1, 2].map(|k| outer[k] - thickness[k]);

    let lesions = signature(spec.etiology, &mut rng);
    let lesion_hu = rng.random_range(60.0..80.0);
    let noise = Normal::new(0.0, noise_hu).expect("finite std");

    let count = dims.iter().product();
    let mut voxels = Vec::with_capacity(count);
    let mut mask = Vec::with_capacity(count);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                let q = [d[0] / inner[0], d[1] / inner[1], d[2] / inner[2]];
                let r_inner: f64 = q.iter().map(|v| v * v).sum();
                let r_outer: f64 = (0..3).map(|k| (d[k] / outer[k]).powi(2)).sum();
                let brain = r_inner <= 1.0;
                mask.push(brain);
                let base = if brain {
                    if lesions.iter().any(|l| l.contains(q)) {
                        lesion_hu
                    } else {
                        PARENCHYMA_HU
                    }
                } else if r_outer <= 1.0 {
                    BONE_HU
                } else {
                    voxels.push(AIR_HU);
                    continue;
                };
                let value = if noise_hu > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                };
                voxels.push(to_hu(value));
            }
        }
    }
    let volume = Volume::new(dims, spacing_mm, voxels)?;
    let mask = BrainMask::new(dims, mask)?;
    let record = clinical_record(spec.etiology, &mut rng, format!("phantom-{:016x}", spec.seed));
    Ok((volume, mask, record))
}

fn clinical_record(label: Etiology, rng: &mut ChaCha8Rng, case_id: String) -> CaseRecord {
    let rates = clinical_rates(label);
    let age_noise = Normal::new(0.0, 13.0).expect("finite std");
    let age = (rates.age_mean + age_noise.sample(rng)).round().clamp(4.0, 94.0) as u32;
    let sex = if rng.random_bool(rates.female) {
        Sex::Female
    } else {
        Sex::Male
    };
    let known_hypertension = rng.random_bool(rates.hypertension);
    let impaired_coagulation = rng.random_bool(rates.coagulopathy);
    let complaint = if rng.random_bool(0.6) {
        rates.complaint
    } else {
        COMPLAINTS.choose(rng).copied().unwrap_or(rates.complaint)
    };
    CaseRecord {
        case_id,
        volume_path: String::new(),
        label,
        age,
        sex,
        known_hypertension,
        impaired_coagulation,
        complaint: complaint.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub proportions: [f64; CLASS_COUNT],
    pub seed: u64,
    pub geometry: PhantomGeometry,
}

/// Label list for a cohort: apportioned counts, shuffled by seed.
pub fn cohort_labels(n: usize, proportions: &[f64; CLASS_COUNT], seed: u64) -> Result<Vec<Etiology>> {
    if proportions.iter().all(|&p| p > 0.0) && n < CLASS_COUNT {
        return Err(Error::invalid(format!(
            "n = {n} cannot cover six nonzero classes"
        )));
    }
    let counts = apportion(n, proportions)?;
    let mut labels: Vec<Etiology> = Etiology::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&e, c)| std::iter::repeat_n(e, c))
        .collect();
    labels.shuffle(&mut seed::rng(seed::mix(seed, u64::MAX)));
    Ok(labels)
}

/// Writes `n` cases under `out_dir/volumes/` plus `out_dir/manifest.jsonl`.
/// Case `i` is generated from `mix(seed, i)`, so cases can be produced in
/// any order or in parallel.
pub fn generate_cohort(spec: &CohortSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    use rayon::prelude::*;

    let out_dir = out_dir.as_ref();
    let labels = cohort_labels(spec.n, &spec.proportions, spec.seed)?;
    let vol_dir = out_dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;

    let cases = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let (volume, _, mut record) = generate_case(&PhantomSpec {
                etiology: label,
                seed: seed::mix(spec.seed, i as u64),
                geometry: spec.geometry,
            })?;
            record.case_id = format!("case-{i:04}");
            record.volume_path = format!("volumes/{}.mvv", record.case_id);
            write_volume(&volume, out_dir.join(&record.volume_path))?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(cases, out_dir)?;
    manifest.write(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
