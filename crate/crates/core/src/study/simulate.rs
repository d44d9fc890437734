use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::service::StudyService;
use super::session::StudySession;
use super::{RaterResponse, StudyError, StudyResult, TaskMode};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};
use crate::inference::PredictionSet;
use crate::seed;
use crate::stats::TaskResponses;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterProfile {
    pub rater_id: String,
    /// Chance of naming the true etiology from images alone.
    pub accuracy: f64,
    /// The same chance once clinical information is shown.
    pub clinical_accuracy: f64,
    /// Chance of taking the model's top class when it is shown.
    pub adoption: f64,
}

impl RaterProfile {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("clinical_accuracy", self.clinical_accuracy),
            ("adoption", self.adoption),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "rater {:?}: {name} must lie in [0, 1], got {v}",
                    self.rater_id
                )));
            }
        }
        if self.rater_id.is_empty() {
            return Err(Error::invalid("rater_id must not be empty"));
        }
        Ok(())
    }
}

/// Task -> rater -> responses in manifest order.
pub type SimulatedResponses = BTreeMap<TaskMode, BTreeMap<String, Vec<RaterResponse>>>;

/// True label with probability `accuracy`, otherwise one of the other five.
fn guess(truth: Etiology, accuracy: f64, rng: &mut impl Rng) -> Etiology {
    if rng.random::<f64>() < accuracy {
        return truth;
    }
    let k = rng.random_range(0..CLASS_COUNT - 1);
    let idx = if k >= truth.index() { k + 1 } else { k };
    Etiology::from_index(idx).expect("in range")
}

/// Deterministic responses for every profile. The images-only and clinical
/// tasks are always produced; the model-assisted task only when predictions
/// are given. In that task each rater takes the model's top class with the
/// adoption probability and otherwise keeps their clinical-task answer.
pub fn simulate_raters(
    manifest: &Manifest,
    predictions: Option<&PredictionSet>,
    profiles: &[RaterProfile],
    seed: u64,
) -> Result<SimulatedResponses> {
    let mut seen = HashSet::new();
    for p in profiles {
        p.validate()?;
        if !seen.insert(p.rater_id.as_str()) {
            return Err(Error::invalid(format!("duplicate rater id {:?}", p.rater_id)));
        }
    }
    let model: Option<HashMap<&str, Etiology>> = predictions.map(|ps| {
        ps.rows
            .iter()
            .filter_map(|r| r.diagnosis().map(|d| (r.case_id.as_str(), d)))
            .collect()
    });
    let mut out = SimulatedResponses::new();
    for p in profiles {
        let base = seed::mix_str(seed, &p.rater_id);
        let stream = |mode: TaskMode, i: usize| seed::rng(seed::mix(seed::mix_str(base, mode.token()), i as u64));
        let mut images = Vec::new();
        let mut clinical = Vec::new();
        let mut assisted = Vec::new();
        for (i, case) in manifest.cases.iter().enumerate() {
            let response = |label, task_mode| RaterResponse {
                rater_id: p.rater_id.clone(),
                case_id: case.case_id.clone(),
                label,
                timestamp: i as u64,
                task_mode,
            };
            let a = guess(case.label, p.accuracy, &mut stream(TaskMode::ImagesOnly, i));
            images.push(response(a, TaskMode::ImagesOnly));
            let b = guess(case.label, p.clinical_accuracy, &mut stream(TaskMode::ImagesClinical, i));
            clinical.push(response(b, TaskMode::ImagesClinical));
            if let Some(model) = &model {
                let adopt = stream(TaskMode::ImagesClinicalAi, i).random::<f64>() < p.adoption;
                let c = match model.get(case.case_id.as_str()) {
                    Some(&m) if adopt => m,
                    _ => b,
                };
                assisted.push(response(c, TaskMode::ImagesClinicalAi));
            }
        }
        out.entry(TaskMode::ImagesOnly).or_default().insert(p.rater_id.clone(), images);
        out.entry(TaskMode::ImagesClinical).or_default().insert(p.rater_id.clone(), clinical);
        if model.is_some() {
            out.entry(TaskMode::ImagesClinicalAi)
                .or_default()
                .insert(p.rater_id.clone(), assisted);
        }
    }
    Ok(out)
}

pub fn labels_by_task(responses: &SimulatedResponses) -> TaskResponses {
    responses
        .iter()
        .map(|(&mode, raters)| {
            let r = raters
                .iter()
                .map(|(id, rs)| (id.clone(), rs.iter().map(|r| (r.case_id.clone(), r.label)).collect()))
                .collect();
            (mode, r)
        })
        .collect()
}

/// One JSON-lines file per (rater, task): `<rater>.<task>.jsonl`.
pub fn write_responses(dir: &Path, responses: &SimulatedResponses) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (mode, raters) in responses {
        for (rater, rs) in raters {
            let path = dir.join(format!("{rater}.{mode}.jsonl"));
            let mut text = String::new();
            for r in rs {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads every `.jsonl` response file in `dir`, grouping lines by their
/// task and rater fields.
pub fn read_responses(dir: &Path) -> Result<SimulatedResponses> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = SimulatedResponses::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: RaterResponse = serde_json::from_str(line)?;
            out.entry(r.task_mode)
                .or_default()
                .entry(r.rater_id.clone())
                .or_default()
                .push(r);
        }
    }
    Ok(out)
}

/// Plays pre-computed responses through the service protocol: one session
/// per (rater, task), answered in session order, then finalized.
pub fn play_through_service(
    service: &StudyService,
    dataset_id: &str,
    responses: &SimulatedResponses,
    seed: u64,
) -> StudyResult<Vec<StudySession>> {
    let mut sessions = Vec::new();
    for (&mode, raters) in responses {
        for (rater, rs) in raters {
            let by_case: HashMap<&str, Etiology> = rs.iter().map(|r| (r.case_id.as_str(), r.label)).collect();
            let s = service.create_session(rater, mode, dataset_id, seed)?;
            for case_id in &s.case_order {
                let label = by_case.get(case_id.as_str()).ok_or_else(|| {
                    StudyError::InvalidArgument(format!("rater {rater:?} has no {mode} response for {case_id:?}"))
                })?;
                service.submit_response(&s.session_id, case_id, label.token())?;
            }
            sessions.push(service.finalize(&s.session_id)?);
        }
    }
    Ok(sessions)
}
