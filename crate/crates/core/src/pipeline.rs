//! File-level pipeline stages shared by the command line and the end-to-end
//! tests: generate, preprocess, split, train, predict, evaluate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{stratified_kfold, FoldAssignment, Manifest};
use crate::error::{Error, Result};
use crate::inference::{predict_dataset, PredictionSet};
use crate::nn::{load_volumes, train_fold_with, EpochLog, IchNetConfig, ModelCheckpoint, TrainOutcome};
use crate::phantom::{generate_cohort, CohortSpec, PhantomGeometry};
use crate::stats::{augmentation_report, Labels, MetricsReport, ReportConfig, TaskResponses};
use crate::volume::{preprocess, read_volume, write_volume, PrepConfig};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FOLDS_FILE: &str = "folds.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ARTIFACTS_FILE: &str = "artifacts.json";

pub fn checkpoint_file(fold: usize) -> String {
    format!("fold-{fold}.ichc")
}

/// A reduced-resolution profile that trains the full five-fold ensemble on
/// one CPU core in minutes: 32 x 32 x 8 voxels over the same physical box
/// as 280 x 280 x 30 at 0.6 x 0.6 x 4.2 mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskProfile {
    pub geometry: PhantomGeometry,
    pub prep: PrepConfig,
    pub model: IchNetConfig,
    pub k: usize,
    pub rotations: usize,
}

impl DeskProfile {
    pub fn fast() -> Self {
        let prep = PrepConfig {
            target_spacing_mm: [5.25, 5.25, 15.75],
            target_dims: [32, 32, 8],
            skull_strip: true,
        };
        DeskProfile {
            geometry: PhantomGeometry::default(),
            model: IchNetConfig {
                input_dims: prep.target_dims,
                epochs: 35,
                learning_rate: 3e-3,
                ..IchNetConfig::default()
            },
            prep,
            k: 5,
            rotations: 1,
        }
    }
}

/// Writes `n` phantoms and their manifest under `out`.
pub fn gen(out: &Path, spec: &CohortSpec) -> Result<Manifest> {
    generate_cohort(spec, out)
}

/// Preprocesses every volume of `manifest` into `out/volumes/`, writing a
/// manifest with the same records pointing at the new files.
pub fn prep(manifest: &Manifest, config: &PrepConfig, out: &Path) -> Result<Manifest> {
    let vol_dir = out.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let cases = manifest
        .cases
        .par_iter()
        .map(|c| {
            let v = preprocess(&read_volume(manifest.volume_path(c))?, config)?;
            let mut rec = c.clone();
            rec.volume_path = format!("volumes/{}.mvv", c.case_id);
            write_volume(&v, out.join(&rec.volume_path))?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let prepped = Manifest::new(cases, out)?;
    prepped.write(out.join(MANIFEST_FILE))?;
    Ok(prepped)
}

pub fn split(manifest: &Manifest, k: usize, seed: u64, out: &Path) -> Result<FoldAssignment> {
    let folds = stratified_kfold(manifest, k, seed)?;
    ensure_dir(out)?;
    folds.write(out.join(FOLDS_FILE))?;
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub epochs: Vec<EpochLog>,
    pub head_gradient_mass: [f64; 6],
}

/// Trains the listed folds (all folds if empty), writing one checkpoint per
/// fold and a combined log under `out`.
pub fn train(
    manifest: &Manifest,
    folds: &FoldAssignment,
    config: &IchNetConfig,
    which: &[usize],
    out: &Path,
) -> Result<Vec<TrainOutcome>> {
    let which: Vec<usize> = if which.is_empty() {
        (0..folds.k).collect()
    } else {
        which.to_vec()
    };
    ensure_dir(out)?;
    let volumes = load_volumes(manifest)?;
    let outcomes = which
        .par_iter()
        .map(|&f| train_fold_with(manifest, &volumes, folds, f, config))
        .collect::<Result<Vec<_>>>()?;
    let mut logs = Vec::new();
    for o in &outcomes {
        o.checkpoint.write(&out.join(checkpoint_file(o.checkpoint.fold)))?;
        logs.push(FoldLog {
            fold: o.checkpoint.fold,
            epochs: o.log.clone(),
            head_gradient_mass: o.head_gradient_mass,
        });
    }
    write_json(&out.join(TRAIN_LOG_FILE), &logs)?;
    Ok(outcomes)
}

/// Loads every `fold-*.ichc` in `dir`, sorted by file name.
pub fn read_checkpoints(dir: &Path) -> Result<Vec<ModelCheckpoint>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("fold-") && n.ends_with(".ichc"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no fold-*.ichc checkpoints in {}", dir.display())));
    }
    paths.iter().map(|p| ModelCheckpoint::read(p)).collect()
}

pub fn predict(
    checkpoints: &[ModelCheckpoint],
    manifest: &Manifest,
    rotations: usize,
    out: &Path,
) -> Result<PredictionSet> {
    let set = predict_dataset(checkpoints, manifest, rotations)?;
    ensure_dir(out)?;
    set.write_csv(out.join(PREDICTIONS_FILE))?;
    Ok(set)
}

pub fn truth(manifest: &Manifest) -> Labels {
    manifest
        .cases
        .iter()
        .map(|c| (c.case_id.clone(), c.label))
        .collect()
}

pub fn eval(
    manifest: &Manifest,
    predictions: Option<&PredictionSet>,
    responses: &TaskResponses,
    config: &ReportConfig,
    out: &Path,
) -> Result<MetricsReport> {
    let report = augmentation_report(&truth(manifest), responses, predictions, config)?;
    ensure_dir(out)?;
    let path = out.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub command: String,
    pub artifacts: Vec<Artifact>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digests every regular file under `out` except the artifact list itself.
pub fn artifact_manifest(command: &str, out: &Path) -> Result<ArtifactManifest> {
    let mut found = BTreeMap::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(out)
                .expect("walk stays under out")
                .to_string_lossy()
                .replace('\\', "/");
            if rel == ARTIFACTS_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            found.insert(
                rel.clone(),
                Artifact {
                    path: rel,
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                },
            );
        }
    }
    Ok(ArtifactManifest {
        command: command.to_string(),
        artifacts: found.into_values().collect(),
    })
}

/// Writes the resolved config and the artifact list next to the outputs.
pub fn record_run<C: Serialize>(command: &str, config: &C, out: &Path) -> Result<ArtifactManifest> {
    ensure_dir(out)?;
    write_json(&out.join(CONFIG_FILE), &serde_json::json!({ "command": command, "config": config }))?;
    let manifest = artifact_manifest(command, out)?;
    write_json(&out.join(ARTIFACTS_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_digests_are_stable_and_skip_their_own_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        fs::write(dir.path().join("sub/b.bin"), [0u8; 4]).unwrap();
        let m = record_run("test", &serde_json::json!({"k": 1}), dir.path()).unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["a.txt", CONFIG_FILE, "sub/b.bin"]);
        assert_eq!(
            m.artifacts[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(m, record_run("test", &serde_json::json!({"k": 1}), dir.path()).unwrap());
    }
}
