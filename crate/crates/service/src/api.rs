//! Routes and JSON error mapping.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use vaguecrs::simulator::SimError;

use crate::live::{AnswerRequest, CheckpointInfo, Engine, StepView, Transcript};
use crate::ServiceError;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownCheckpoint(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Expired(_) => StatusCode::GONE,
            ServiceError::Finished | ServiceError::Simulation(SimError::Finished) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) | ServiceError::Simulation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Policy(_)
            | ServiceError::Load(_)
            | ServiceError::Incompatible(_)
            | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    checkpoint: String,
    p0: String,
    #[serde(default)]
    user: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct TranscriptQuery {
    #[serde(default)]
    full: bool,
}

type Shared = Arc<Engine>;

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn checkpoints(State(engine): State<Shared>) -> Json<Vec<CheckpointInfo>> {
    Json(engine.checkpoints())
}

async fn create(State(engine): State<Shared>, Json(req): Json<CreateRequest>) -> Result<Json<StepView>, ServiceError> {
    let run = move || engine.create(&req.checkpoint, &req.p0, req.user.as_deref());
    blocking(run).await.map(Json)
}

async fn answer(
    State(engine): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> Result<Json<StepView>, ServiceError> {
    blocking(move || engine.answer(&id, &req)).await.map(Json)
}

async fn transcript(
    State(engine): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> Result<Json<Transcript>, ServiceError> {
    blocking(move || engine.transcript(&id, q.full)).await.map(Json)
}

/// Agent steps run network forward passes; keep them off the async workers.
async fn blocking<R: Send + 'static>(
    f: impl FnOnce() -> Result<R, ServiceError> + Send + 'static,
) -> Result<R, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::Internal(e.to_string())))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/checkpoints", get(checkpoints))
        .route("/sessions", post(create))
        .route("/sessions/:id", get(transcript))
        .route("/sessions/:id/answer", post(answer))
        .with_state(engine)
}

pub async fn serve(listener: TcpListener, engine: Arc<Engine>) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}
