//! Reader study: three reading tasks over one dataset, each rater working
//! through a seed-shuffled case list strictly in order.

mod payload;
mod service;
mod session;
mod simulate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::etiology::Etiology;

pub use payload::{
    render_slice_png, window_to_gray, AiPanel, AiRow, CasePayload, ClinicalInfo, SliceImage, WINDOW_LEVEL_HU,
    WINDOW_WIDTH_HU,
};
pub use service::{finalize_and_report, replay_log, Ack, Dataset, StudyService};
pub use session::{SessionEvent, SessionStatus, StudySession};
pub use simulate::{
    labels_by_task, play_through_service, read_responses, simulate_raters, write_responses, RaterProfile,
    SimulatedResponses,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    ImagesOnly,
    ImagesClinical,
    ImagesClinicalAi,
}

impl TaskMode {
    pub const ALL: [TaskMode; 3] = [TaskMode::ImagesOnly, TaskMode::ImagesClinical, TaskMode::ImagesClinicalAi];

    pub fn token(self) -> &'static str {
        match self {
            TaskMode::ImagesOnly => "images_only",
            TaskMode::ImagesClinical => "images_clinical",
            TaskMode::ImagesClinicalAi => "images_clinical_ai",
        }
    }

    pub fn shows_clinical(self) -> bool {
        self != TaskMode::ImagesOnly
    }

    pub fn shows_model(self) -> bool {
        self == TaskMode::ImagesClinicalAi
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TaskMode {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.token() == s)
            .ok_or_else(|| StudyError::InvalidArgument(format!("unknown task mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterResponse {
    pub rater_id: String,
    pub case_id: String,
    pub label: Etiology,
    /// Milliseconds since the Unix epoch, or a sequence number for
    /// simulated raters.
    pub timestamp: u64,
    pub task_mode: TaskMode,
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("dataset {0:?} is already registered")]
    DuplicateDataset(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("dataset {0:?} has no registered model predictions")]
    PredictionsRequired(String),
    #[error("case index {requested} requested but the session is at {cursor}")]
    OutOfOrder { requested: usize, cursor: usize },
    #[error("case {found:?} submitted but the current case is {expected:?}")]
    NotCurrentCase { expected: Option<String>, found: String },
    #[error("case {0:?} already has a response in this session")]
    DuplicateResponse(String),
    #[error("session {0:?} is finalized")]
    SessionFinalized(String),
    #[error("session {0:?} has unanswered cases")]
    IncompleteSession(String),
    #[error("unknown etiology label {0:?}")]
    UnknownLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Core(#[from] crate::Error),
}

impl StudyError {
    /// Stable machine-readable code for API clients.
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::UnknownDataset(_) => "unknown_dataset",
            StudyError::DuplicateDataset(_) => "duplicate_dataset",
            StudyError::UnknownSession(_) => "unknown_session",
            StudyError::PredictionsRequired(_) => "predictions_required",
            StudyError::OutOfOrder { .. } => "out_of_order",
            StudyError::NotCurrentCase { .. } => "not_current_case",
            StudyError::DuplicateResponse(_) => "duplicate_response",
            StudyError::SessionFinalized(_) => "session_finalized",
            StudyError::IncompleteSession(_) => "incomplete_session",
            StudyError::UnknownLabel(_) => "unknown_label",
            StudyError::InvalidArgument(_) => "invalid_argument",
            StudyError::Core(_) => "internal",
        }
    }
}

pub type StudyResult<T> = Result<T, StudyError>;
