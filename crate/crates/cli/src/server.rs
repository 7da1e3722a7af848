//! HTTP binding of the annotation service.

use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use svdrank::annotation::{AnnotationError, AnnotationService, Submission};

pub type Shared = Arc<AnnotationService>;

struct ApiError(AnnotationError);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
struct NewSession {
    #[serde(default)]
    annotator: String,
    #[serde(default)]
    svd: String,
    #[serde(default)]
    mode: String,
}

async fn new_session(
    State(svc): State<Shared>,
    Query(q): Query<NewSession>,
) -> ApiResult<svdrank::annotation::SessionInfo> {
    Ok(Json(svc.new_session(&q.annotator, &q.svd, &q.mode)?))
}

async fn warmup(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<svdrank::annotation::Warmup> {
    Ok(Json(svc.warmup(&id)?))
}

async fn warmup_done(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<svdrank::annotation::SessionInfo> {
    Ok(Json(svc.complete_warmup(&id)?))
}

async fn task(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<svdrank::annotation::TaskView> {
    Ok(Json(svc.task(&id)?))
}

async fn label(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<Submission>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<svdrank::dataset::LabelRecord>), ApiError> {
    let Json(submission) = body.map_err(|e| AnnotationError::BadRequest(e.body_text()))?;
    let record = svc.submit(&id, &submission)?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn audio(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let path = svc.audio_path(&id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| AnnotationError::NotFound(format!("audio for {id:?} unavailable: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], Body::from(bytes)).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/session/new", get(new_session))
        .route("/api/session/{id}/warmup", get(warmup))
        .route("/api/session/{id}/warmup/done", post(warmup_done))
        .route("/api/session/{id}/task", get(task))
        .route("/api/session/{id}/label", post(label))
        .route("/audio/{id}", get(audio))
        .with_state(service)
}
