//! Fold-ensemble inference with optional test-time rotation averaging.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::etiology::{argmax, Etiology, CLASS_COUNT};
use crate::nn::{softmax, ModelCheckpoint};
use crate::volume::{read_volume, rotate_axial, Volume, ROTATION_COUNT, ROTATION_STEP_DEGREES};

pub const CSV_HEADER: &str = "case_id,p_aneurysm,p_hypertensive,p_avm,p_mmd,p_cm,p_others,diagnosis";
pub const FAILED: &str = "failed";

const RENORMALIZE_DRIFT: f64 = 1e-9;

pub type ProbabilityVector = [f64; CLASS_COUNT];

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub case_id: String,
    /// `None` when the case could not be scored.
    pub probs: Option<ProbabilityVector>,
    pub models: usize,
    pub rotations: usize,
    pub error: Option<String>,
}

impl Prediction {
    pub fn diagnosis(&self) -> Option<Etiology> {
        self.probs.map(|p| Etiology::from_index(argmax(&p)).expect("six entries"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub rows: Vec<Prediction>,
}

/// Mean of the member vectors in the given order.
///
/// A running mean is used so that identical members reproduce their value
/// bit for bit. The result is renormalized only if rounding pushed its sum
/// more than 1e-9 away from one.
pub fn mean_probabilities(members: &[ProbabilityVector]) -> Result<ProbabilityVector> {
    let Some(first) = members.first() else {
        return Err(Error::invalid("ensemble needs at least one member"));
    };
    let mut mean = *first;
    for (k, m) in members.iter().enumerate().skip(1) {
        let n = (k + 1) as f64;
        for c in 0..CLASS_COUNT {
            mean[c] += (m[c] - mean[c]) / n;
        }
    }
    let total: f64 = mean.iter().sum();
    if (total - 1.0).abs() > RENORMALIZE_DRIFT {
        mean = mean.map(|p| p / total);
    }
    Ok(mean)
}

/// Checkpoint indices in summation order: by fold, then seed.
fn summation_order(checkpoints: &[ModelCheckpoint]) -> Result<Vec<usize>> {
    let Some(first) = checkpoints.first() else {
        return Err(Error::invalid("ensemble needs at least one checkpoint"));
    };
    let expected = first.fingerprint();
    for c in &checkpoints[1..] {
        let found = c.fingerprint();
        if found != expected {
            return Err(Error::FingerprintMismatch {
                expected: expected.clone(),
                found,
            });
        }
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by_key(|&i| (checkpoints[i].fold, checkpoints[i].seed));
    Ok(order)
}

fn check_rotations(rotations: usize) -> Result<()> {
    if rotations == 1 || rotations == ROTATION_COUNT {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "rotations must be 1 or {ROTATION_COUNT}, got {rotations}"
        )))
    }
}

/// Copies scored at test time: the volume itself, or all 18 axial rotations.
fn rotation_copies(volume: &Volume, rotations: usize) -> Vec<Volume> {
    if rotations == 1 {
        return vec![volume.clone()];
    }
    (0..rotations)
        .map(|k| rotate_axial(volume, k as f64 * ROTATION_STEP_DEGREES))
        .collect()
}

fn predict_ordered(
    checkpoints: &[ModelCheckpoint],
    order: &[usize],
    volume: &Volume,
    rotations: usize,
) -> Result<ProbabilityVector> {
    // Models are averaged within each copy first, so identical members
    // reproduce the single-model output exactly for any rotation count.
    let per_copy = rotation_copies(volume, rotations)
        .iter()
        .map(|v| {
            let members = order
                .iter()
                .map(|&i| Ok(softmax(&checkpoints[i].model.logits(v)?)))
                .collect::<Result<Vec<_>>>()?;
            mean_probabilities(&members)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_probabilities(&per_copy)
}

/// Mean forward probability over every (checkpoint, rotation copy) pair.
pub fn ensemble_predict(
    checkpoints: &[ModelCheckpoint],
    volume: &Volume,
    rotations: usize,
) -> Result<ProbabilityVector> {
    check_rotations(rotations)?;
    let order = summation_order(checkpoints)?;
    predict_ordered(checkpoints, &order, volume, rotations)
}

/// Scores every case of the manifest in manifest order. A case whose volume
/// cannot be read or scored is kept as a failed row and the run continues.
pub fn predict_dataset(
    checkpoints: &[ModelCheckpoint],
    manifest: &Manifest,
    rotations: usize,
) -> Result<PredictionSet> {
    check_rotations(rotations)?;
    let order = summation_order(checkpoints)?;
    let rows = manifest
        .cases
        .par_iter()
        .map(|case| {
            let scored = read_volume(manifest.volume_path(case))
                .and_then(|v| predict_ordered(checkpoints, &order, &v, rotations));
            let (probs, error) = match scored {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Prediction {
                case_id: case.case_id.clone(),
                probs,
                models: checkpoints.len(),
                rotations,
                error,
            }
        })
        .collect();
    Ok(PredictionSet { rows })
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Option<&Prediction> {
        self.rows.iter().find(|r| r.case_id == case_id)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Prediction> {
        self.rows.iter().filter(|r| r.probs.is_none())
    }

    /// Probabilities with six decimals. Failed cases have empty probability
    /// cells and the diagnosis `failed`.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            if r.case_id.contains([',', '"', '\n', '\r']) {
                return Err(Error::invalid(format!(
                    "case id {:?} cannot be written unquoted",
                    r.case_id
                )));
            }
            out.push_str(&r.case_id);
            match (r.probs, r.diagnosis()) {
                (Some(p), Some(d)) => {
                    for v in p {
                        write!(out, ",{v:.6}").expect("string write");
                    }
                    write!(out, ",{d}").expect("string write");
                }
                _ => {
                    out.push_str(&",".repeat(CLASS_COUNT));
                    write!(out, ",{FAILED}").expect("string write");
                }
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses a predictions CSV. Model and rotation counts are not part of
    /// the file and read back as zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == CSV_HEADER => {}
            other => {
                return Err(Error::Header(format!(
                    "expected predictions header, found {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != CLASS_COUNT + 2 {
                return Err(Error::Header(format!(
                    "row {} has {} fields, expected {}",
                    n + 2,
                    fields.len(),
                    CLASS_COUNT + 2
                )));
            }
            let case_id = fields[0].to_string();
            let last = fields[CLASS_COUNT + 1].trim();
            if last == FAILED {
                rows.push(Prediction {
                    case_id,
                    probs: None,
                    models: 0,
                    rotations: 0,
                    error: Some(FAILED.to_string()),
                });
                continue;
            }
            let mut probs = [0.0; CLASS_COUNT];
            for (c, p) in probs.iter_mut().enumerate() {
                *p = fields[c + 1].trim().parse().map_err(|_| {
                    Error::Header(format!("row {}: bad probability {:?}", n + 2, fields[c + 1]))
                })?;
            }
            let label: Etiology = last.parse()?;
            let row = Prediction {
                case_id,
                probs: Some(probs),
                models: 0,
                rotations: 0,
                error: None,
            };
            // Rounded probabilities can tie where the full values did not.
            let diag = row.diagnosis().expect("scored row");
            if probs[diag.index()] > probs[label.index()] {
                return Err(Error::Header(format!(
                    "row {}: diagnosis {label} is not the largest probability",
                    n + 2
                )));
            }
            rows.push(row);
        }
        Ok(PredictionSet { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(i: usize) -> ProbabilityVector {
        std::array::from_fn(|c| if c == i { 1.0 } else { 0.0 })
    }

    #[test]
    fn two_one_hot_members_split_evenly_and_tie_to_aneurysm() {
        let mean = mean_probabilities(&[one_hot(0), one_hot(1)]).unwrap();
        assert_eq!(mean, [0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(Etiology::from_index(argmax(&mean)), Some(Etiology::Aneurysm));
    }

    #[test]
    fn identical_members_are_reproduced_exactly() {
        let p = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
        let mean = mean_probabilities(&[p; 5]).unwrap();
        assert_eq!(mean.map(f64::to_bits), p.map(f64::to_bits));
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        assert!(mean_probabilities(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_and_failed_rows() {
        let set = PredictionSet {
            rows: vec![
                Prediction {
                    case_id: "a".into(),
                    probs: Some([0.935, 0.001, 0.004, 0.02, 0.01, 0.03]),
                    models: 5,
                    rotations: 1,
                    error: None,
                },
                Prediction {
                    case_id: "b".into(),
                    probs: None,
                    models: 5,
                    rotations: 1,
                    error: Some("missing".into()),
                },
            ],
        };
        let csv = set.to_csv().unwrap();
        assert_eq!(
            csv,
            format!("{CSV_HEADER}\na,0.935000,0.001000,0.004000,0.020000,0.010000,0.030000,aneurysm\nb,,,,,,,failed\n")
        );
        let back = PredictionSet::from_csv(&csv).unwrap();
        assert_eq!(back.rows[0].probs, set.rows[0].probs);
        assert_eq!(back.rows[0].diagnosis(), Some(Etiology::Aneurysm));
        assert!(back.rows[1].probs.is_none());
    }

    #[test]
    fn csv_rejects_wrong_header_and_unquotable_ids() {
        assert!(PredictionSet::from_csv("id,p\n").is_err());
        let set = PredictionSet {
            rows: vec![Prediction {
                case_id: "a,b".into(),
                probs: Some(one_hot(0)),
                models: 1,
                rotations: 1,
                error: None,
            }],
        };
        assert!(set.to_csv().is_err());
    }

    #[test]
    fn empty_set_is_header_only() {
        assert_eq!(PredictionSet::default().to_csv().unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn rotation_count_must_be_one_or_eighteen() {
        assert!(check_rotations(1).is_ok());
        assert!(check_rotations(18).is_ok());
        assert!(check_rotations(4).is_err());
    }
}
