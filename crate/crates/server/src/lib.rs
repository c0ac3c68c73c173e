//! HTTP front end for [`Controller`].
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/case/{dataset}/{pid}` | `?session=` |
//! | POST | `/apply` | [`ApplyRequest`] |
//! | GET | `/evidence/{dataset}/{pid}` | `?threshold=&min_duration=&merge_gap=` |
//! | GET | `/log` | `?offset=&limit=` |
//! | POST | `/session` | [`SessionRequest`] |
//! | GET | `/session/{id}` | |
//! | GET | `/report/{table}` | CSV, one of [`TABLES`] |
//! | GET | `/health` | |
//!
//! Errors are `{"error": kind, "message": text}` with a 4xx/5xx status.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use clinloop_core::controller::{ApplyRequest, ApplyResponse, ControllerError, SessionInfo, SessionRequest};
use clinloop_core::evidence::StreakParams;
use clinloop_core::record::{read_log, DecisionRecord, ReadMode};
use clinloop_core::report::{build_report, ReportOptions, TABLES};
use clinloop_core::Controller;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(StatusCode, &'static str, String);

impl From<ControllerError> for ApiError {
    fn from(e: ControllerError) -> Self {
        let (status, kind) = match &e {
            ControllerError::UnknownCase { .. } => (StatusCode::NOT_FOUND, "not_found"),
            ControllerError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ControllerError::TokenReplay => (StatusCode::CONFLICT, "token_replay"),
            ControllerError::AlreadyDecided { .. } => (StatusCode::CONFLICT, "already_decided"),
            ControllerError::InvalidToken => (StatusCode::BAD_REQUEST, "invalid_token"),
            ControllerError::MissingAction => (StatusCode::BAD_REQUEST, "missing_action"),
            ControllerError::Policy(_) | ControllerError::Evidence(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.1.to_string(),
            message: self.2,
        };
        (self.0, Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

type AppState = Arc<Controller>;

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: Option<String>,
}

async fn get_case(
    State(ctl): State<AppState>,
    Path((dataset, pid)): Path<(String, String)>,
    Query(q): Query<SessionQuery>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(ctl.get_case(&dataset, &pid, q.session.as_deref())?))
}

async fn apply(State(ctl): State<AppState>, Json(req): Json<ApplyRequest>) -> Result<Json<ApplyResponse>, ApiError> {
    Ok(Json(ctl.apply(&req)?))
}

#[derive(Debug, Deserialize)]
struct StreakQuery {
    threshold: Option<f64>,
    min_duration: Option<usize>,
    merge_gap: Option<usize>,
}

async fn get_evidence(
    State(ctl): State<AppState>,
    Path((dataset, pid)): Path<(String, String)>,
    Query(q): Query<StreakQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let params = match (q.threshold, q.min_duration, q.merge_gap) {
        (None, None, None) => None,
        (t, m, g) => Some(StreakParams {
            threshold: t.unwrap_or(0.5),
            min_duration: m.unwrap_or(1),
            merge_gap: g.unwrap_or(0),
        }),
    };
    Ok(Json(ctl.get_evidence(&dataset, &pid, params)?))
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogPage {
    pub total: usize,
    pub offset: usize,
    pub records: Vec<DecisionRecord>,
}

pub const MAX_PAGE: usize = 1000;

fn current_log(ctl: &Controller) -> Result<Vec<DecisionRecord>, ApiError> {
    match ctl.log_path() {
        None => Ok(Vec::new()),
        Some(path) if !path.exists() => Ok(Vec::new()),
        Some(path) => Ok(read_log(&path, ReadMode::Salvage).map_err(internal)?.records),
    }
}

async fn get_log(State(ctl): State<AppState>, Query(q): Query<PageQuery>) -> Result<Json<LogPage>, ApiError> {
    let records = current_log(&ctl)?;
    let offset = q.offset.unwrap_or(0).min(records.len());
    let limit = q.limit.unwrap_or(100).min(MAX_PAGE);
    let total = records.len();
    let page = records.into_iter().skip(offset).take(limit).collect();
    Ok(Json(LogPage {
        total,
        offset,
        records: page,
    }))
}

async fn post_session(State(ctl): State<AppState>, Json(req): Json<SessionRequest>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(ctl.create_session(&req)?))
}

async fn get_session(State(ctl): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    Ok(Json(ctl.session_info(&id)?))
}

async fn get_report(State(ctl): State<AppState>, Path(table): Path<String>) -> Result<Response, ApiError> {
    let name = table.strip_suffix(".csv").unwrap_or(&table);
    if !TABLES.contains(&name) {
        return Err(ApiError(StatusCode::NOT_FOUND, "unknown_table", format!("no table {name:?}")));
    }
    let records = current_log(&ctl)?;
    let report = build_report(&records, Some(ctl.cohort().cases()), &ReportOptions::default())
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, "report", e.to_string()))?;
    let csv = report.table_csv(name).map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(ctl: Arc<Controller>) -> Router {
    Router::new()
        .route("/case/{dataset}/{pid}", get(get_case))
        .route("/apply", post(apply))
        .route("/evidence/{dataset}/{pid}", get(get_evidence))
        .route("/log", get(get_log))
        .route("/session", post(post_session))
        .route("/session/{id}", get(get_session))
        .route("/report/{table}", get(get_report))
        .route("/health", get(health))
        .with_state(ctl)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    ctl: Arc<Controller>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(ctl)).with_graceful_shutdown(shutdown).await
}

/// A server running on its own thread; dropping it shuts the server down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            match t.join() {
                Ok(Err(e)) => tracing::error!("server exited with {e}"),
                Err(_) => tracing::error!("server thread panicked"),
                Ok(Ok(())) => {}
            }
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background
/// thread with a single-threaded runtime.
pub fn spawn(ctl: Arc<Controller>, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let bound = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("clinloop-http".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            serve(listener, ctl, async {
                let _ = rx.await;
            })
            .await
        })
    })?;
    Ok(ServerHandle {
        addr: bound,
        stop: Some(tx),
        thread: Some(thread),
    })
}
