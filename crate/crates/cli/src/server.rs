//! JSON API over the reader-study service.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use etiobench_core::stats::{MetricsReport, ReportConfig};
use etiobench_core::study::{Ack, CasePayload, SessionStatus, StudyError, StudyService, StudySession, TaskMode};

#[derive(Clone)]
struct AppState {
    service: Arc<StudyService>,
    report: ReportConfig,
}

pub fn router(service: Arc<StudyService>, report: ReportConfig) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/case", get(current_case))
        .route("/sessions/{id}/response", post(respond))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/reports/{dataset_id}", get(get_report))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed here")
        })
        .with_state(AppState { service, report })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match &e {
            StudyError::UnknownDataset(_) | StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::UnknownLabel(_) | StudyError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            StudyError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_argument", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs service work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StudyError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub rater_id: String,
    pub task_mode: TaskMode,
    pub dataset_id: String,
    pub total: usize,
    pub cursor: usize,
    pub remaining: usize,
    pub status: SessionStatus,
}

impl From<&StudySession> for SessionView {
    fn from(s: &StudySession) -> Self {
        SessionView {
            session_id: s.session_id.clone(),
            rater_id: s.rater_id.clone(),
            task_mode: s.task_mode,
            dataset_id: s.dataset_id.clone(),
            total: s.len(),
            cursor: s.cursor,
            remaining: s.len() - s.cursor,
            status: s.status,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub rater_id: String,
    pub task_mode: TaskMode,
    pub dataset_id: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitResponse {
    pub case_id: String,
    pub label: String,
}

async fn create_session(
    State(st): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let s = blocking(move || st.service.create_session(&req.rater_id, req.task_mode, &req.dataset_id, req.seed)).await?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&s))))
}

async fn current_case(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<CasePayload> {
    blocking(move || {
        let s = st.service.session(&id)?;
        st.service.case_payload(&id, s.cursor)
    })
    .await
    .map(Json)
}

async fn respond(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SubmitResponse>, JsonRejection>,
) -> ApiResult<Ack> {
    let Json(req) = body?;
    blocking(move || st.service.submit_response(&id, &req.case_id, &req.label))
        .await
        .map(Json)
}

async fn finalize(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    let s = blocking(move || st.service.finalize(&id)).await?;
    Ok(Json(SessionView::from(&s)))
}

async fn get_report(State(st): State<AppState>, Path(dataset_id): Path<String>) -> ApiResult<MetricsReport> {
    blocking(move || st.service.report(&dataset_id, &st.report)).await.map(Json)
}
