//! Case manifests, stratified k-fold splitting, minority-class oversampling
//! and inverse-frequency class weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};
use crate::seed;
use crate::volume::ROTATION_COUNT;

/// Repeat count per class in canonical order: the two majority classes
/// once, AVM 6x, MMD 14x, CM 17x, others 3x.
pub const OVERSAMPLE_FACTORS: [usize; CLASS_COUNT] = [1, 1, 6, 14, 17, 3];

/// Development-cohort class counts in canonical order (N = 1868).
pub const DEVELOPMENT_COUNTS: [usize; CLASS_COUNT] = [845, 628, 104, 44, 34, 213];

/// Development-cohort class proportions in canonical order.
pub const DEVELOPMENT_PROPORTIONS: [f64; CLASS_COUNT] = [0.452, 0.336, 0.056, 0.024, 0.018, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub volume_path: String,
    pub label: Etiology,
    pub age: u32,
    pub sex: Sex,
    pub known_hypertension: bool,
    pub impaired_coagulation: bool,
    pub complaint: String,
}

/// An ordered list of cases. Relative volume paths resolve against `root`,
/// the directory the manifest was read from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub cases: Vec<CaseRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(cases: Vec<CaseRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &cases {
            if !seen.insert(c.case_id.as_str()) {
                return Err(Error::DuplicateCase(c.case_id.clone()));
            }
        }
        Ok(Manifest {
            cases,
            root: root.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn volume_path(&self, case: &CaseRecord) -> PathBuf {
        let p = Path::new(&case.volume_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn labels(&self) -> HashMap<String, Etiology> {
        self.cases
            .iter()
            .map(|c| (c.case_id.clone(), c.label))
            .collect()
    }

    pub fn class_counts(&self) -> [usize; CLASS_COUNT] {
        let mut counts = [0; CLASS_COUNT];
        for c in &self.cases {
            counts[c.label.index()] += 1;
        }
        counts
    }

    /// Keeps only the listed cases, preserving manifest order.
    pub fn subset(&self, ids: &HashSet<&str>) -> Manifest {
        Manifest {
            cases: self
                .cases
                .iter()
                .filter(|c| ids.contains(c.case_id.as_str()))
                .cloned()
                .collect(),
            root: self.root.clone(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            out.push_str(&serde_json::to_string(c).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let cases = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<CaseRecord>, _>>()?;
        Manifest::new(cases, root)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::from_jsonl(&text, root)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, case_id: &str) -> Option<usize> {
        self.assignment.get(case_id).copied()
    }

    /// Case ids in `fold`, in manifest order.
    pub fn members<'a>(&self, manifest: &'a Manifest, fold: usize) -> Vec<&'a str> {
        manifest
            .cases
            .iter()
            .filter(|c| self.fold_of(&c.case_id) == Some(fold))
            .map(|c| c.case_id.as_str())
            .collect()
    }

    /// Case ids outside `fold`, in manifest order.
    pub fn complement<'a>(&self, manifest: &'a Manifest, fold: usize) -> Vec<&'a str> {
        manifest
            .cases
            .iter()
            .filter(|c| matches!(self.fold_of(&c.case_id), Some(f) if f != fold))
            .map(|c| c.case_id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fold assignment serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let folds: FoldAssignment = serde_json::from_str(&text)?;
        if folds.assignment.values().any(|&f| f >= folds.k) {
            return Err(Error::invalid("fold index out of range in fold file"));
        }
        Ok(folds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Stratified k-fold split. Within each class (canonical order) the cases
/// are shuffled by seed and dealt round-robin; the dealing position carries
/// over between classes so fold sizes also differ by at most one.
pub fn stratified_kfold(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if manifest.is_empty() {
        return Err(Error::invalid("cannot split an empty manifest"));
    }
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for class in Etiology::ALL {
        let mut ids: Vec<&str> = manifest
            .cases
            .iter()
            .filter(|c| c.label == class)
            .map(|c| c.case_id.as_str())
            .collect();
        ids.shuffle(&mut seed::rng(seed::mix(seed, class.index() as u64)));
        for id in ids {
            assignment.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldAssignment { k, assignment })
}

/// Repeats each id `OVERSAMPLE_FACTORS[label]` times, repeats adjacent.
pub fn oversample(ids: &[String], labels: &HashMap<String, Etiology>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let label = labels
            .get(id)
            .ok_or_else(|| Error::UnknownLabel(format!("no label for case {id}")))?;
        for _ in 0..OVERSAMPLE_FACTORS[label.index()] {
            out.push(id.clone());
        }
    }
    Ok(out)
}

/// Inverse-frequency weights `N / (6 * n_c)`, computed on the counts before
/// oversampling. Balanced counts give weight 1 for every class.
pub fn class_weights(counts: &[usize; CLASS_COUNT]) -> Result<[f64; CLASS_COUNT]> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "class {} has zero cases",
            Etiology::ALL[c]
        )));
    }
    let total: usize = counts.iter().sum();
    Ok(counts.map(|n| total as f64 / (CLASS_COUNT as f64 * n as f64)))
}

/// Number of volumes after rotation augmentation.
pub fn augmented_training_size(manifest: &Manifest) -> usize {
    ROTATION_COUNT * manifest.len()
}

/// Largest-remainder apportionment of `n` over `proportions`; leftover units
/// go to the largest fractional parts, ties to the lowest class index.
pub fn apportion(n: usize, proportions: &[f64; CLASS_COUNT]) -> Result<[usize; CLASS_COUNT]> {
    if proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("proportions must be finite and nonnegative"));
    }
    let sum: f64 = proportions.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("proportions sum to {sum}, not 1")));
    }
    let quotas = proportions.map(|p| n as f64 * p / sum);
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..CLASS_COUNT).collect();
    let frac = |i: usize| {
        let f = quotas[i] - counts[i] as f64;
        if f < 1e-9 { 0.0 } else { f }
    };
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn manifest_with_counts(counts: [usize; 6]) -> Manifest {
        let mut cases = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                cases.push(CaseRecord {
                    case_id: format!("c{c}-{i:04}"),
                    volume_path: format!("v/c{c}-{i}.mvv"),
                    label: Etiology::ALL[c],
                    age: 50,
                    sex: Sex::Female,
                    known_hypertension: false,
                    impaired_coagulation: false,
                    complaint: "headache".into(),
                });
            }
        }
        Manifest::new(cases, "").unwrap()
    }

    #[test]
    fn five_per_class_gives_one_per_fold() {
        let m = manifest_with_counts([5; 6]);
        let folds = stratified_kfold(&m, 5, 3).unwrap();
        for f in 0..5 {
            let mut per_class = [0; 6];
            for id in folds.members(&m, f) {
                per_class[m.get(id).unwrap().label.index()] += 1;
            }
            assert_eq!(per_class, [1; 6]);
        }
    }

    #[test]
    fn development_cohort_fold_sizes() {
        let m = manifest_with_counts(DEVELOPMENT_COUNTS);
        assert_eq!(m.len(), 1868);
        let folds = stratified_kfold(&m, 5, 11).unwrap();
        for s in folds.fold_sizes() {
            assert!(s == 373 || s == 374, "fold size {s}");
        }
        // Per-class counts within one of perfect stratification.
        for class in Etiology::ALL {
            let n = m.class_counts()[class.index()];
            for f in 0..5 {
                let got = folds
                    .members(&m, f)
                    .iter()
                    .filter(|id| m.get(id).unwrap().label == class)
                    .count();
                assert!((got as f64 - n as f64 / 5.0).abs() < 1.0);
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let m = manifest_with_counts([7, 5, 3, 2, 1, 4]);
        let a = stratified_kfold(&m, 3, 9).unwrap();
        assert_eq!(a, stratified_kfold(&m, 3, 9).unwrap());
        assert_ne!(a, stratified_kfold(&m, 3, 10).unwrap());
        assert_eq!(a.assignment.len(), m.len());
        let mut union: Vec<&str> = (0..3).flat_map(|f| a.members(&m, f)).collect();
        union.sort();
        let mut all: Vec<&str> = m.cases.iter().map(|c| c.case_id.as_str()).collect();
        all.sort();
        assert_eq!(union, all);
        assert_eq!(a.complement(&m, 0).len() + a.members(&m, 0).len(), m.len());
    }

    #[test]
    fn split_errors() {
        let m = manifest_with_counts([1; 6]);
        assert!(stratified_kfold(&m, 1, 0).is_err());
        assert!(stratified_kfold(&Manifest::default(), 5, 0).is_err());
    }

    #[test]
    fn oversampling_factors() {
        let m = manifest_with_counts([2, 0, 10, 0, 3, 0]);
        let labels = m.labels();
        let ids = |class: Etiology| -> Vec<String> {
            m.cases.iter().filter(|c| c.label == class).map(|c| c.case_id.clone()).collect()
        };
        assert_eq!(oversample(&ids(Etiology::Avm), &labels).unwrap().len(), 60);
        assert_eq!(oversample(&ids(Etiology::Cm), &labels).unwrap().len(), 51);
        let an = ids(Etiology::Aneurysm);
        assert_eq!(oversample(&an, &labels).unwrap(), an);

        let mixed = vec![an[0].clone(), ids(Etiology::Cm)[0].clone()];
        let out = oversample(&mixed, &labels).unwrap();
        assert_eq!(out[0], an[0]);
        assert!(out[1..].iter().all(|id| *id == mixed[1]));
        assert_eq!(out.len(), 18);

        assert!(matches!(
            oversample(&["ghost".to_string()], &labels),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn weights_from_development_counts() {
        // Direct arithmetic: 1868 / (6 * n_c).
        let w = class_weights(&DEVELOPMENT_COUNTS).unwrap();
        let expected = [0.3684, 0.4957, 2.9936, 7.0758, 9.1569, 1.4617];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert_eq!(class_weights(&[9; 6]).unwrap(), [1.0; 6]);
        assert!(class_weights(&[1, 1, 0, 1, 1, 1]).is_err());
    }

    #[test]
    fn doubling_one_count_halves_its_weight_share() {
        let base = [10, 20, 30, 40, 50, 60];
        let mut doubled = base;
        doubled[2] *= 2;
        let w = class_weights(&doubled).unwrap();
        let n_new: usize = doubled.iter().sum();
        for c in 0..6 {
            let expected = n_new as f64 / (6.0 * doubled[c] as f64);
            assert!((w[c] - expected).abs() < 1e-12);
        }
        let w0 = class_weights(&base).unwrap();
        let n_old: usize = base.iter().sum();
        assert!((w[2] / w0[2] - 0.5 * n_new as f64 / n_old as f64).abs() < 1e-12);
    }

    #[test]
    fn weights_are_scale_invariant() {
        let base = [845, 628, 104, 44, 34, 213];
        let w = class_weights(&base).unwrap();
        let w3 = class_weights(&base.map(|n| 3 * n)).unwrap();
        for (a, b) in w.iter().zip(w3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_sizes() {
        assert_eq!(augmented_training_size(&manifest_with_counts(DEVELOPMENT_COUNTS)), 33_624);
        assert_eq!(augmented_training_size(&Manifest::default()), 0);
        assert_eq!(augmented_training_size(&manifest_with_counts([7, 0, 0, 0, 0, 0])), 126);
    }

    #[test]
    fn largest_remainder_apportionment() {
        assert_eq!(apportion(100, &DEVELOPMENT_PROPORTIONS).unwrap(), [45, 34, 6, 2, 2, 11]);
        assert_eq!(apportion(6, &[1.0 / 6.0; 6]).unwrap(), [1; 6]);
        assert_eq!(apportion(600, &DEVELOPMENT_PROPORTIONS).unwrap(), [271, 202, 34, 14, 11, 68]);
        let c = apportion(1868, &DEVELOPMENT_PROPORTIONS).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 1868);
        assert!(apportion(10, &[0.5, 0.5, 0.5, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn manifest_jsonl_round_trip_and_field_names() {
        let m = manifest_with_counts([1, 1, 0, 0, 0, 0]);
        let text = m.to_jsonl();
        let first = text.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in [
            "case_id",
            "volume_path",
            "label",
            "age",
            "sex",
            "known_hypertension",
            "impaired_coagulation",
            "complaint",
        ] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(v["label"], "aneurysm");
        assert_eq!(Manifest::from_jsonl(&text, "").unwrap(), m);

        let dup = format!("{first}\n{first}\n");
        assert!(matches!(Manifest::from_jsonl(&dup, ""), Err(Error::DuplicateCase(_))));
    }

    #[test]
    fn fold_file_format() {
        let m = manifest_with_counts([2, 0, 0, 0, 0, 0]);
        let f = stratified_kfold(&m, 2, 0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(v["k"], 2);
        assert!(v["assignment"]["c0-0000"].is_u64());
    }
}
