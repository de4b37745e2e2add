//! HTTP session service.
//!
//! Sessions are loaded lazily from the store and cached. Every request that
//! changes a session's log persists the new log before responding, and a
//! per-session lock serializes mutations.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use derplace::placement::{
    AutoTrialStats, BranchStats, Event, Heatmap, HeatmapContext, OcppRun, PlacementError, Session,
    SessionConfig, DEFAULT_MIN_BRANCH_LEN,
};
use derplace::svg::export_heatmap_svg;
use derplace::{Configuration, StabilityError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{feeder_id, SessionStore, StoreError};

/// Machine-readable error: HTTP status plus `{"error": code, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.code, "message": self.message})),
        )
            .into_response()
    }
}

impl From<PlacementError> for ApiError {
    fn from(e: PlacementError) -> Self {
        use PlacementError as P;
        let (status, code) = match &e {
            P::UnknownNode(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_node"),
            P::Substation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "substation"),
            P::WrongMode { .. } => (StatusCode::CONFLICT, "wrong_mode"),
            P::NoHeatmap(_) => (StatusCode::CONFLICT, "no_heatmap"),
            P::StaleHeatmap { .. } => (StatusCode::CONFLICT, "stale_heatmap"),
            P::CandidateUnstable(_) => (StatusCode::CONFLICT, "candidate_unstable"),
            P::Occupied(_) => (StatusCode::CONFLICT, "occupied"),
            P::NotColocated { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "not_colocated"),
            P::NothingToUndo => (StatusCode::CONFLICT, "nothing_to_undo"),
            P::Control(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_configuration"),
            P::Stability(StabilityError::Control(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_configuration")
            }
            P::Stability(_) => (StatusCode::INTERNAL_SERVER_ERROR, "stability"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::UnknownFeeder(_) => (StatusCode::NOT_FOUND, "unknown_feeder"),
            StoreError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            StoreError::Feeder(_) => (StatusCode::BAD_REQUEST, "invalid_feeder"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text = if body.is_empty() { &b"{}"[..] } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Default)]
struct Inner {
    sessions: HashMap<String, Arc<Mutex<Session>>>,
}

/// Shared server state: the store plus a cache of live sessions.
#[derive(Clone)]
pub struct AppState {
    store: SessionStore,
    inner: Arc<Mutex<Inner>>,
}

impl AppState {
    pub fn new(store: SessionStore) -> Self {
        AppState {
            store,
            inner: Arc::default(),
        }
    }

    fn cached(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.inner.lock().expect("cache lock").sessions.get(id).cloned()
    }

    /// Returns the live session, replaying it from disk on first use.
    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        if let Some(s) = self.cached(id) {
            return Ok(s);
        }
        let loaded = Arc::new(Mutex::new(self.store.load_session(id)?));
        let mut inner = self.inner.lock().expect("cache lock");
        Ok(inner.sessions.entry(id.to_string()).or_insert(loaded).clone())
    }

    /// Runs `f` on the session under its lock on the blocking pool and
    /// persists the log if it grew.
    async fn with_session<R, F>(&self, id: String, f: F) -> ApiResult<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut Session) -> ApiResult<R> + Send + 'static,
    {
        let handle = self.session(&id)?;
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || {
            let mut s = handle.lock().unwrap_or_else(|p| p.into_inner());
            let before = s.log().len();
            let out = f(&mut s);
            if s.log().len() != before {
                store.save_session(&id, &s)?;
            }
            out
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "worker", e.to_string()))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/feeders", post(create_feeder))
        .route("/feeders/{id}", get(get_feeder))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/heatmap", post(heatmap))
        .route("/sessions/{id}/place", post(place))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/branches", get(branches))
        .route("/sessions/{id}/ocpp", post(ocpp))
        .route("/sessions/{id}/auto", post(auto))
        .route("/sessions/{id}/export.svg", get(export_svg))
        .with_state(state)
}

/// Binds `addr`, reports the bound address through `on_bound`, and serves
/// until the process exits.
pub async fn serve(
    addr: SocketAddr,
    store: SessionStore,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(AppState::new(store))).await
}

#[derive(Serialize)]
struct FeederSummary {
    id: String,
    substation: String,
    n_nodes: usize,
    n_lines: usize,
}

async fn create_feeder(State(st): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (id, f) = st.store.put_feeder(text)?;
    let summary = FeederSummary {
        id,
        substation: f.substation.clone(),
        n_nodes: f.nodes.len(),
        n_lines: f.lines.len(),
    };
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn get_feeder(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let f = st.store.feeder(&id)?;
    Ok((
        [(header::CONTENT_TYPE, "application/json")],
        f.to_json(),
    )
        .into_response())
}

#[derive(Deserialize)]
struct CreateSession {
    feeder_id: String,
    #[serde(flatten)]
    config: SessionConfig,
}

/// Read view of a session, derived only from its replayed log.
#[derive(Serialize)]
struct SessionView<'a> {
    id: &'a str,
    feeder_id: String,
    config: &'a SessionConfig,
    events: &'a [Event],
    core: &'a Configuration,
    step: usize,
    current_heatmap: Option<&'a Heatmap>,
    empty_nodes: Vec<&'a str>,
}

fn view(id: &str, s: &Session) -> serde_json::Value {
    let v = SessionView {
        id,
        feeder_id: feeder_id(s.feeder()),
        config: s.config(),
        events: s.log(),
        core: s.core(),
        step: s.heatmaps().len(),
        current_heatmap: s.current_heatmap(),
        empty_nodes: s.empty_nodes(),
    };
    serde_json::to_value(v).expect("views serialize")
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = parse_body(&body)?;
    let f = Arc::new(st.store.feeder(&req.feeder_id)?);
    let session = Session::new(f, req.config);
    let id = st.store.create_session(&session)?;
    let body = view(&id, &session);
    st.inner
        .lock()
        .expect("cache lock")
        .sessions
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let key = id.clone();
    st.with_session(id, move |s| Ok(Json(view(&key, s)))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatmapRequest {
    #[serde(default)]
    perf_node: Option<String>,
    #[serde(default)]
    colocated: bool,
    #[serde(default)]
    samples: Option<usize>,
}

async fn heatmap(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Heatmap>> {
    let req: HeatmapRequest = parse_body(&body)?;
    let context = match (req.perf_node, req.colocated) {
        (Some(p), false) => HeatmapContext::Performance(p),
        (None, true) => HeatmapContext::Colocated,
        _ => return Err(ApiError::bad_request("give exactly one of perf_node or colocated")),
    };
    st.with_session(id, move |s| Ok(Json(s.heatmap(context, req.samples)?)))
        .await
}

#[derive(Deserialize)]
struct PlaceRequest {
    actuator: String,
    performance: String,
}

async fn place(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: PlaceRequest = parse_body(&body)?;
    let key = id.clone();
    st.with_session(id, move |s| {
        s.accept_placement(&req.actuator, &req.performance)?;
        Ok(Json(view(&key, s)))
    })
    .await
}

async fn undo(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let key = id.clone();
    st.with_session(id, move |s| {
        s.undo()?;
        Ok(Json(view(&key, s)))
    })
    .await
}

#[derive(Deserialize)]
struct BranchQuery {
    min_length: Option<usize>,
}

async fn branches(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<BranchQuery>,
) -> ApiResult<Json<BranchStats>> {
    let min = q.min_length.unwrap_or(DEFAULT_MIN_BRANCH_LEN);
    st.with_session(id, move |s| Ok(Json(s.branch_stats(min)))).await
}

async fn ocpp(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<OcppRun>> {
    st.with_session(id, |s| Ok(Json(s.run_ocpp()?))).await
}

#[derive(Deserialize)]
struct AutoRequest {
    seed: u64,
}

async fn auto(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AutoTrialStats>> {
    let req: AutoRequest = parse_body(&body)?;
    st.with_session(id, move |s| Ok(Json(s.run_auto_ocpp(req.seed)?)))
        .await
}

async fn export_svg(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    st.with_session(id, |s| {
        let h = s
            .current_heatmap()
            .ok_or_else(|| PlacementError::NoHeatmap("any".into()))?;
        let svg = export_heatmap_svg(h, s.feeder(), s.config().threshold);
        Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
    })
    .await
}
