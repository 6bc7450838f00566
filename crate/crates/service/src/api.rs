use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use mfl_core::annotate::{QueueItem, SubmitError, SubmitOutcome};
use mfl_core::orchestrator::{parse_pairs, RunConfig, RunError, StatusSnapshot};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::registry::{Registry, RunHandle};

/// Longest accepted long-poll wait.
pub const MAX_WAIT_MS: u64 = 60_000;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({ "error": message.into() }) }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("no run {id:?}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        match &e {
            RunError::Config(c) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).with("key", json!(c.key)),
            RunError::Budget(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).with("key", json!("budget.total")),
            RunError::Pool { .. } | RunError::Data(_) | RunError::Io { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).with("key", json!("pool"))
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

fn blocking_failed(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))
}

#[derive(Serialize)]
struct RunSummary {
    id: String,
    run_dir: Option<PathBuf>,
    labels: Vec<String>,
    status: StatusSnapshot,
}

fn summary(h: &RunHandle) -> RunSummary {
    RunSummary {
        id: h.id.clone(),
        run_dir: h.run_dir.clone(),
        labels: h.labels.iter().map(|l| l.as_str().to_string()).collect(),
        status: h.status(),
    }
}

/// Accepts either a JSON object of flat config keys or the flat text form.
fn parse_config(body: &[u8]) -> Result<RunConfig, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "body is not UTF-8"))?;
    let pairs: BTreeMap<String, String> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => map
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::String(s) => s,
                    Value::Array(items) => items.iter().map(|i| i.as_str().map_or_else(|| i.to_string(), String::from)).collect::<Vec<_>>().join(","),
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect(),
        Ok(_) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "config must be an object of flat keys")),
        Err(_) => parse_pairs(text).map_err(|e| ApiError::from(RunError::Config(e)))?,
    };
    RunConfig::from_pairs(&pairs).map_err(|e| ApiError::from(RunError::Config(e)))
}

async fn create_run(State(reg): State<Arc<Registry>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let config = parse_config(&body)?;
    let handle = tokio::task::spawn_blocking(move || reg.start(config)).await.map_err(blocking_failed)??;
    info!("started {}", handle.id);
    Ok((StatusCode::CREATED, Json(summary(&handle))))
}

async fn list_runs(State(reg): State<Arc<Registry>>) -> Json<Vec<RunSummary>> {
    Json(reg.ids().iter().filter_map(|id| reg.get(id)).map(|h| summary(&h)).collect())
}

async fn run_status(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Json<StatusSnapshot>, ApiError> {
    let h = reg.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(h.status()))
}

async fn stop_run(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Json<StatusSnapshot>, ApiError> {
    let h = reg.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let status = tokio::task::spawn_blocking(move || h.stop()).await.map_err(blocking_failed)?;
    Ok(Json(status))
}

#[derive(Debug, Deserialize)]
pub struct QueueParams {
    /// Long-poll: wait up to this long for the queue to change.
    pub wait_ms: Option<u64>,
    /// Version the caller already has; defaults to the current one.
    pub since: Option<u64>,
}

#[derive(Serialize)]
struct QueueResponse {
    run: String,
    version: u64,
    closed: bool,
    items: Vec<QueueItem>,
}

async fn get_queue(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(params): Query<QueueParams>,
) -> Result<Json<QueueResponse>, ApiError> {
    let h = reg.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let queue = h.queue().clone();
    let (version, items) = match params.wait_ms {
        Some(ms) if ms > 0 => {
            let wait = Duration::from_millis(ms.min(MAX_WAIT_MS));
            tokio::task::spawn_blocking(move || {
                let since = params.since.unwrap_or_else(|| queue.version());
                // with no version given, pending work is returned at once
                let pending = queue.pending();
                if params.since.is_none() && !pending.is_empty() {
                    (since, pending)
                } else {
                    queue.wait_for_change(since, wait)
                }
            })
            .await
            .map_err(blocking_failed)?
        }
        _ => (queue.version(), queue.pending()),
    };
    Ok(Json(QueueResponse { run: id, version, closed: h.queue().is_closed(), items }))
}

#[derive(Debug, Deserialize)]
pub struct Submission {
    pub sample_id: String,
    pub label: String,
    #[serde(default)]
    pub annotator: Option<String>,
}

async fn submit(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Json(sub): Json<Submission>,
) -> Result<Json<Value>, ApiError> {
    let h = reg.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    match h.queue().submit(&sub.sample_id, &sub.label) {
        Ok(outcome) => {
            if outcome == SubmitOutcome::Accepted {
                info!("{id}: {} labelled {} by {}", sub.sample_id, sub.label, sub.annotator.as_deref().unwrap_or("anonymous"));
            }
            Ok(Json(json!({ "sample_id": sub.sample_id, "label": sub.label, "outcome": outcome })))
        }
        Err(e @ SubmitError::InvalidLabel { .. }) => {
            let allowed: Vec<&str> = h.labels.iter().map(|l| l.as_str()).collect();
            Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).with("labels", json!(allowed)))
        }
        Err(e @ SubmitError::Conflict { .. }) => {
            let existing = match &e {
                SubmitError::Conflict { existing, .. } => existing.as_str().to_string(),
                _ => unreachable!(),
            };
            Err(ApiError::new(StatusCode::CONFLICT, e.to_string()).with("existing", json!(existing)))
        }
        Err(e) => Err(ApiError::new(StatusCode::CONFLICT, e.to_string())),
    }
}

/// The service routes. Paths match the console's expectations exactly.
pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}/status", get(run_status))
        .route("/runs/{id}/stop", post(stop_run))
        .route("/runs/{id}/queue", get(get_queue))
        .route("/runs/{id}/annotations", post(submit))
        .with_state(registry)
}
