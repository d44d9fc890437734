use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{RaterResponse, StudyError, StudyResult, TaskMode};
use crate::etiology::Etiology;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub session_id: String,
    pub rater_id: String,
    pub task_mode: TaskMode,
    pub dataset_id: String,
    pub seed: u64,
    pub case_order: Vec<String>,
    pub cursor: usize,
    pub responses: Vec<RaterResponse>,
    pub status: SessionStatus,
}

/// Append-only log entries; replaying them in order rebuilds a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created {
        session_id: String,
        rater_id: String,
        task_mode: TaskMode,
        dataset_id: String,
        seed: u64,
        case_order: Vec<String>,
    },
    Responded {
        response: RaterResponse,
    },
    Finalized,
}

/// Dataset case ids shuffled by (dataset, seed).
pub(crate) fn case_order(dataset_id: &str, case_ids: &[String], seed: u64) -> Vec<String> {
    let mut order = case_ids.to_vec();
    order.shuffle(&mut seed::rng(seed::mix_str(seed, dataset_id)));
    order
}

impl StudySession {
    pub fn current_case(&self) -> Option<&str> {
        self.case_order.get(self.cursor).map(String::as_str)
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.case_order.len()
    }

    pub fn len(&self) -> usize {
        self.case_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.case_order.is_empty()
    }

    pub fn labels(&self) -> crate::stats::Labels {
        self.responses
            .iter()
            .map(|r| (r.case_id.clone(), r.label))
            .collect()
    }

    pub(crate) fn check_open(&self) -> StudyResult<()> {
        match self.status {
            SessionStatus::Open => Ok(()),
            SessionStatus::Finalized => Err(StudyError::SessionFinalized(self.session_id.clone())),
        }
    }

    /// Validates a submission and returns the event that records it.
    pub(crate) fn prepare_response(&self, case_id: &str, label: &str, timestamp: u64) -> StudyResult<SessionEvent> {
        self.check_open()?;
        let label: Etiology = label
            .parse()
            .map_err(|_| StudyError::UnknownLabel(label.to_string()))?;
        if self.responses.iter().any(|r| r.case_id == case_id) {
            return Err(StudyError::DuplicateResponse(case_id.to_string()));
        }
        if self.current_case() != Some(case_id) {
            return Err(StudyError::NotCurrentCase {
                expected: self.current_case().map(str::to_string),
                found: case_id.to_string(),
            });
        }
        Ok(SessionEvent::Responded {
            response: RaterResponse {
                rater_id: self.rater_id.clone(),
                case_id: case_id.to_string(),
                label,
                timestamp,
                task_mode: self.task_mode,
            },
        })
    }

    pub(crate) fn prepare_finalize(&self) -> StudyResult<SessionEvent> {
        self.check_open()?;
        if !self.is_complete() {
            return Err(StudyError::IncompleteSession(self.session_id.clone()));
        }
        Ok(SessionEvent::Finalized)
    }

    /// Applies an already validated event.
    pub fn apply(&mut self, event: &SessionEvent) -> StudyResult<()> {
        match event {
            SessionEvent::Created { .. } => Err(StudyError::InvalidArgument(
                "session already created".into(),
            )),
            SessionEvent::Responded { response } => {
                self.check_open()?;
                if self.current_case() != Some(response.case_id.as_str()) {
                    return Err(StudyError::NotCurrentCase {
                        expected: self.current_case().map(str::to_string),
                        found: response.case_id.clone(),
                    });
                }
                self.responses.push(response.clone());
                self.cursor += 1;
                Ok(())
            }
            SessionEvent::Finalized => {
                self.check_open()?;
                self.status = SessionStatus::Finalized;
                Ok(())
            }
        }
    }

    pub fn from_created(event: &SessionEvent) -> StudyResult<Self> {
        match event {
            SessionEvent::Created {
                session_id,
                rater_id,
                task_mode,
                dataset_id,
                seed,
                case_order,
            } => Ok(StudySession {
                session_id: session_id.clone(),
                rater_id: rater_id.clone(),
                task_mode: *task_mode,
                dataset_id: dataset_id.clone(),
                seed: *seed,
                case_order: case_order.clone(),
                cursor: 0,
                responses: Vec::new(),
                status: SessionStatus::Open,
            }),
            _ => Err(StudyError::InvalidArgument(
                "event log must start with a creation event".into(),
            )),
        }
    }

    pub fn replay(events: &[SessionEvent]) -> StudyResult<Self> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| StudyError::InvalidArgument("empty event log".into()))?;
        let mut s = Self::from_created(first)?;
        for e in rest {
            s.apply(e)?;
        }
        Ok(s)
    }
}
