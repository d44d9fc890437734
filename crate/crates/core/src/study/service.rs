use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::payload::{ai_panel, clinical, slices, CasePayload, WINDOW_LEVEL_HU, WINDOW_WIDTH_HU};
use super::session::{case_order, SessionEvent, SessionStatus, StudySession};
use super::{StudyError, StudyResult, TaskMode};
use crate::data::Manifest;
use crate::error::Error;
use crate::inference::PredictionSet;
use crate::stats::{augmentation_report, Labels, MetricsReport, ReportConfig, TaskResponses};
use crate::volume::read_volume;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub manifest: Manifest,
    pub predictions: Option<PredictionSet>,
}

impl Dataset {
    pub fn truth(&self) -> Labels {
        self.manifest
            .cases
            .iter()
            .map(|c| (c.case_id.clone(), c.label))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub case_id: String,
    pub cursor: usize,
    pub remaining: usize,
}

type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

#[derive(Default)]
struct Registry {
    datasets: HashMap<String, Arc<Dataset>>,
    sessions: BTreeMap<String, Arc<Mutex<StudySession>>>,
    next_id: u64,
}

/// Sessions and datasets shared by the HTTP handlers. Each session is
/// mutated under its own lock; with a log directory every accepted event is
/// appended to `<session_id>.jsonl` before it takes effect.
pub struct StudyService {
    registry: RwLock<Registry>,
    log_dir: Option<PathBuf>,
    clock: Clock,
}

impl Default for StudyService {
    fn default() -> Self {
        Self::new()
    }
}

fn system_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn lock_err<T>(_: T) -> StudyError {
    StudyError::Core(Error::invalid("study state lock poisoned"))
}

impl StudyService {
    pub fn new() -> Self {
        StudyService {
            registry: RwLock::new(Registry::default()),
            log_dir: None,
            clock: Box::new(system_millis),
        }
    }

    /// Persists events under `dir`, first replaying any session logs
    /// already there.
    pub fn with_log_dir(dir: impl Into<PathBuf>) -> StudyResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut registry = Registry::default();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            let session = replay_log(&p)?;
            if let Some(n) = session
                .session_id
                .strip_prefix("session-")
                .and_then(|n| n.parse::<u64>().ok())
            {
                registry.next_id = registry.next_id.max(n + 1);
            }
            registry
                .sessions
                .insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        }
        Ok(StudyService {
            registry: RwLock::new(registry),
            log_dir: Some(dir),
            clock: Box::new(system_millis),
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn register_dataset(&self, dataset: Dataset) -> StudyResult<()> {
        let mut reg = self.registry.write().map_err(lock_err)?;
        if reg.datasets.contains_key(&dataset.id) {
            return Err(StudyError::DuplicateDataset(dataset.id));
        }
        reg.datasets.insert(dataset.id.clone(), Arc::new(dataset));
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> StudyResult<Arc<Dataset>> {
        let reg = self.registry.read().map_err(lock_err)?;
        reg.datasets
            .get(id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownDataset(id.to_string()))
    }

    fn handle(&self, session_id: &str) -> StudyResult<Arc<Mutex<StudySession>>> {
        let reg = self.registry.read().map_err(lock_err)?;
        reg.sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))
    }

    fn log(&self, session_id: &str, event: &SessionEvent) -> StudyResult<()> {
        let Some(dir) = &self.log_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{session_id}.jsonl"));
        let mut line = serde_json::to_string(event).map_err(Error::from)?;
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn create_session(
        &self,
        rater_id: &str,
        task_mode: TaskMode,
        dataset_id: &str,
        seed: u64,
    ) -> StudyResult<StudySession> {
        if rater_id.is_empty() {
            return Err(StudyError::InvalidArgument("rater_id must not be empty".into()));
        }
        let mut reg = self.registry.write().map_err(lock_err)?;
        let dataset = reg
            .datasets
            .get(dataset_id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownDataset(dataset_id.to_string()))?;
        if task_mode.shows_model() && dataset.predictions.is_none() {
            return Err(StudyError::PredictionsRequired(dataset_id.to_string()));
        }
        let ids: Vec<String> = dataset.manifest.cases.iter().map(|c| c.case_id.clone()).collect();
        let session_id = format!("session-{:06}", reg.next_id);
        let event = SessionEvent::Created {
            session_id: session_id.clone(),
            rater_id: rater_id.to_string(),
            task_mode,
            dataset_id: dataset_id.to_string(),
            seed,
            case_order: case_order(dataset_id, &ids, seed),
        };
        self.log(&session_id, &event)?;
        let session = StudySession::from_created(&event)?;
        reg.next_id += 1;
        reg.sessions
            .insert(session_id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn session(&self, session_id: &str) -> StudyResult<StudySession> {
        let h = self.handle(session_id)?;
        let s = h.lock().map_err(lock_err)?;
        Ok(s.clone())
    }

    pub fn sessions(&self) -> StudyResult<Vec<StudySession>> {
        let handles: Vec<_> = {
            let reg = self.registry.read().map_err(lock_err)?;
            reg.sessions.values().cloned().collect()
        };
        handles
            .iter()
            .map(|h| h.lock().map(|s| s.clone()).map_err(lock_err))
            .collect()
    }

    pub fn case_payload(&self, session_id: &str, index: usize) -> StudyResult<CasePayload> {
        let session = self.session(session_id)?;
        session.check_open()?;
        if index != session.cursor || session.is_complete() {
            return Err(StudyError::OutOfOrder {
                requested: index,
                cursor: session.cursor,
            });
        }
        let dataset = self.dataset(&session.dataset_id)?;
        let case_id = session.case_order[index].clone();
        let case = dataset
            .manifest
            .get(&case_id)
            .ok_or_else(|| StudyError::Core(Error::invalid(format!("case {case_id:?} left the dataset"))))?;
        let volume = read_volume(dataset.manifest.volume_path(case))?;
        let model = if session.task_mode.shows_model() {
            let preds = dataset
                .predictions
                .as_ref()
                .ok_or_else(|| StudyError::PredictionsRequired(dataset.id.clone()))?;
            let probs = preds.get(&case_id).and_then(|p| p.probs).ok_or_else(|| {
                StudyError::Core(Error::invalid(format!("no model prediction for case {case_id:?}")))
            })?;
            Some(ai_panel(&probs))
        } else {
            None
        };
        Ok(CasePayload {
            session_id: session.session_id.clone(),
            task_mode: session.task_mode,
            index,
            total: session.len(),
            case_id,
            window_level: WINDOW_LEVEL_HU,
            window_width: WINDOW_WIDTH_HU,
            slices: slices(&volume)?,
            clinical: session.task_mode.shows_clinical().then(|| clinical(case)),
            model,
        })
    }

    pub fn submit_response(&self, session_id: &str, case_id: &str, label: &str) -> StudyResult<Ack> {
        let h = self.handle(session_id)?;
        let mut s = h.lock().map_err(lock_err)?;
        let event = s.prepare_response(case_id, label, (self.clock)())?;
        self.log(session_id, &event)?;
        s.apply(&event)?;
        Ok(Ack {
            session_id: session_id.to_string(),
            case_id: case_id.to_string(),
            cursor: s.cursor,
            remaining: s.len() - s.cursor,
        })
    }

    pub fn finalize(&self, session_id: &str) -> StudyResult<StudySession> {
        let h = self.handle(session_id)?;
        let mut s = h.lock().map_err(lock_err)?;
        let event = s.prepare_finalize()?;
        self.log(session_id, &event)?;
        s.apply(&event)?;
        Ok(s.clone())
    }

    /// Report over every finalized session of the dataset.
    pub fn report(&self, dataset_id: &str, config: &ReportConfig) -> StudyResult<MetricsReport> {
        let dataset = self.dataset(dataset_id)?;
        let sessions: Vec<StudySession> = self
            .sessions()?
            .into_iter()
            .filter(|s| s.dataset_id == dataset_id && s.status == SessionStatus::Finalized)
            .collect();
        finalize_and_report(&sessions, &dataset, config)
    }
}

pub fn replay_log(path: &Path) -> StudyResult<StudySession> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let events = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<Vec<SessionEvent>, _>>()
        .map_err(Error::from)?;
    StudySession::replay(&events)
}

/// Reader report over complete sessions of one dataset, at most one session
/// per (rater, task).
pub fn finalize_and_report(
    sessions: &[StudySession],
    dataset: &Dataset,
    config: &ReportConfig,
) -> StudyResult<MetricsReport> {
    let mut responses: TaskResponses = BTreeMap::new();
    for s in sessions {
        if s.dataset_id != dataset.id {
            return Err(StudyError::InvalidArgument(format!(
                "session {:?} belongs to dataset {:?}, not {:?}",
                s.session_id, s.dataset_id, dataset.id
            )));
        }
        if !s.is_complete() {
            return Err(StudyError::IncompleteSession(s.session_id.clone()));
        }
        let by_rater = responses.entry(s.task_mode).or_default();
        if by_rater.insert(s.rater_id.clone(), s.labels()).is_some() {
            return Err(StudyError::InvalidArgument(format!(
                "rater {:?} has more than one {} session",
                s.rater_id, s.task_mode
            )));
        }
    }
    Ok(augmentation_report(
        &dataset.truth(),
        &responses,
        dataset.predictions.as_ref(),
        config,
    )?)
}
