//! HTTP review service for one pipeline run.
//!
//! Reads go straight to the in-memory review state. Mutations (decisions,
//! regenerations, resume) take the single writer lock on a blocking thread
//! and answer only after the event log has been synced.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use signalforge_core::alignment::{AlignmentStatus, Decision};
use signalforge_core::pipeline::{artifact_code, regenerate_item, resume_run, PipelineError, PipelineRun};
use signalforge_core::provider::CompletionProvider;
use signalforge_core::review::{ReviewError, ReviewStore};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

/// Header naming the acting reviewer when the body does not.
pub const ACTOR_HEADER: &str = "x-actor";
const DEFAULT_PAGE: usize = 50;

pub struct AppState {
    run_id: String,
    run_dir: PathBuf,
    store: Mutex<ReviewStore>,
    provider: Arc<dyn CompletionProvider>,
}

impl AppState {
    /// Open the run at `run_dir`, replaying its review log.
    pub fn open(run_dir: &Path, provider: Arc<dyn CompletionProvider>) -> Result<AppState, ServiceError> {
        let run = PipelineRun::load(run_dir)?;
        let store = ReviewStore::open(run_dir)?;
        Ok(AppState {
            run_id: run.run_id,
            run_dir: run_dir.to_path_buf(),
            store: Mutex::new(store),
            provider,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Upstream(String),
    #[error("{0}")]
    Internal(String),
}

impl From<ReviewError> for ServiceError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::UnknownItem(_) => ServiceError::NotFound(e.to_string()),
            ReviewError::InvalidTransition(_) | ReviewError::Duplicate(_) => ServiceError::Conflict(e.to_string()),
            ReviewError::Validation(_) => ServiceError::BadRequest(e.to_string()),
            ReviewError::Provider(_) => ServiceError::Upstream(e.to_string()),
            ReviewError::Store { .. } => ServiceError::Internal(e.to_string()),
        }
    }
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Review(r) => r.into(),
            PipelineError::StageFailure { .. } => ServiceError::Upstream(e.to_string()),
            PipelineError::State(_) => ServiceError::Conflict(e.to_string()),
            PipelineError::Preflight(_) | PipelineError::Input(_) => ServiceError::Internal(e.to_string()),
        }
    }
}

/// Error body of every non-2xx response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "validation"),
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "invalid_transition"),
            ServiceError::Upstream(_) => (StatusCode::BAD_GATEWAY, "provider"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            error: kind.into(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    pub status: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub action: Decision,
    #[serde(default)]
    pub actor: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegenerateRequest {
    pub constraint: String,
    #[serde(default)]
    pub actor: Option<String>,
}

fn actor(body: Option<String>, headers: &HeaderMap) -> String {
    body.filter(|a| !a.trim().is_empty())
        .or_else(|| headers.get(ACTOR_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .unwrap_or_else(|| "anonymous".into())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, ReviewStore> {
    state.store.lock().unwrap_or_else(|p| p.into_inner())
}

async fn list_alignments(State(state): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> Result<Response, ServiceError> {
    let status = q
        .status
        .as_deref()
        .filter(|s| !s.is_empty())
        .map(str::parse::<AlignmentStatus>)
        .transpose()
        .map_err(ServiceError::BadRequest)?;
    let page = lock(&state).list(status, q.offset.unwrap_or(0), q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, 500));
    Ok(Json(page).into_response())
}

async fn get_alignment(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let item = lock(&state).get(&id)?.clone();
    Ok(Json(item).into_response())
}

async fn decide(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(req): Json<DecisionRequest>,
) -> Result<Response, ServiceError> {
    let who = actor(req.actor, &headers);
    let item = blocking(move || Ok(lock(&state).decide(&id, req.action, &who)?)).await?;
    tracing::info!(item = %item.id, status = %item.status(), "decision recorded");
    Ok(Json(item).into_response())
}

async fn regenerate(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(req): Json<RegenerateRequest>,
) -> Result<Response, ServiceError> {
    let who = actor(req.actor, &headers);
    let item = blocking(move || {
        let mut store = lock(&state);
        Ok(regenerate_item(&state.run_dir, &mut store, &id, &req.constraint, &who, state.provider.as_ref())?)
    })
    .await?;
    tracing::info!(item = %item.id, status = %item.status(), "alignment regenerated");
    Ok(Json(item).into_response())
}

async fn artifact(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let code = {
        let store = lock(&state);
        artifact_code(&state.run_dir, &store, &id)
    };
    match code {
        Some(text) => Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()),
        None => Err(ServiceError::NotFound(format!("no artifact `{id}`"))),
    }
}

fn check_run(state: &AppState, id: &str) -> Result<(), ServiceError> {
    if id == state.run_id {
        Ok(())
    } else {
        Err(ServiceError::NotFound(format!("unknown run `{id}`")))
    }
}

async fn get_run(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    check_run(&state, &id)?;
    let run = PipelineRun::load(&state.run_dir)?;
    Ok(Json(run).into_response())
}

async fn resume(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    check_run(&state, &id)?;
    let run = blocking(move || {
        let _writer = lock(&state);
        Ok(resume_run(&state.run_dir, state.provider.as_ref())?)
    })
    .await?;
    Ok(Json(run).into_response())
}

async fn index() -> &'static str {
    "signalforge review service\n\
     GET  /api/alignments?status=flagged\n\
     GET  /api/alignments/{id}\n\
     POST /api/alignments/{id}/decision\n\
     POST /api/alignments/{id}/regenerate\n\
     GET  /api/artifacts/{id}/code\n\
     GET  /api/runs/{id}\n\
     POST /api/runs/{id}/resume\n"
}

/// Build the router. `ui_dir`, when given, is served at `/`.
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/alignments", get(list_alignments))
        .route("/api/alignments/{id}", get(get_alignment))
        .route("/api/alignments/{id}/decision", post(decide))
        .route("/api/alignments/{id}/regenerate", post(regenerate))
        .route("/api/artifacts/{id}/code", get(artifact))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/resume", post(resume))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
