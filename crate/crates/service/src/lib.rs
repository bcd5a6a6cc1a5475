//! HTTP/JSON front end for semantic queries and browse sessions.
//!
//! Entities are addressed by name. The model is loaded once and shared
//! read-only; sessions live in memory and vanish on restart.

pub mod api;
pub mod sessions;

use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgsq_core::semquery::{analogy_query, similar_entities, similar_with_bias, QuerySpec, Similarity};
use kgsq_core::{BrowseSession32, Model32};
use serde::Deserialize;
use serde_json::json;

pub use api::{search_entities, ApiError, QueryRequest, QueryResponse, ResultRow};
pub use sessions::SessionStore;

pub const DEFAULT_ENTITY_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Similar,
    Biased,
    Analogy,
}

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<Model32>,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(model: Model32, sessions: SessionStore) -> Self {
        Self {
            model: Arc::new(model),
            sessions: Arc::new(sessions),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServeConfig {
    pub session_ttl: Duration,
    pub max_sessions: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            session_ttl: sessions::DEFAULT_TTL,
            max_sessions: sessions::DEFAULT_CAPACITY,
        }
    }
}

/// Runs a query request against the model exactly as the library would.
pub fn run_query(model: &Model32, kind: QueryKind, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
    let vocab = &model.vocabulary;
    let anchor = api::resolve_names(vocab, std::slice::from_ref(&req.entity))?[0];
    let spec = QuerySpec::new(anchor, req.k)
        .positives(api::resolve_names(vocab, &req.positives)?)
        .negatives(api::resolve_names(vocab, &req.negatives)?)
        .type_filter(req.type_filter.clone())
        .exclude(req.exclude_self.unwrap_or(true))
        .similarity(if req.cosine { Similarity::Cosine } else { Similarity::Dot });
    let list = match kind {
        QueryKind::Similar => similar_entities(&spec, model)?,
        QueryKind::Biased => similar_with_bias(&spec, model)?,
        QueryKind::Analogy => analogy_query(&spec, model)?,
    };
    Ok(QueryResponse::from_ranked(&list, vocab))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/entities", get(entities))
        .route("/query/similar", post(|s, b| query(QueryKind::Similar, s, b)))
        .route("/query/biased", post(|s, b| query(QueryKind::Biased, s, b)))
        .route("/query/analogy", post(|s, b| query(QueryKind::Analogy, s, b)))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/step", post(session_step))
        .route("/sessions/{id}/back", post(session_back))
        .fallback(|| async { (StatusCode::NOT_FOUND, Json(json!({"error": "not_found"}))) })
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    model: Model32,
    config: ServeConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let store = SessionStore::new(config.session_ttl, config.max_sessions);
    let app = router(AppState::new(model, store));
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown signal received");
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_owned();
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        %method,
        path,
        status = resp.status().as_u16(),
        micros = start.elapsed().as_micros() as u64,
        "request"
    );
    resp
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "entities": st.model.num_entities(),
        "dim": st.model.dim(),
    }))
}

#[derive(Debug, Deserialize)]
struct EntityParams {
    #[serde(default)]
    q: String,
    #[serde(rename = "type")]
    entity_type: Option<String>,
    limit: Option<usize>,
}

async fn entities(
    State(st): State<AppState>,
    params: Result<Query<EntityParams>, QueryRejection>,
) -> Result<Json<api::EntityList>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let limit = p.limit.unwrap_or(DEFAULT_ENTITY_LIMIT);
    if limit == 0 {
        return Err(ApiError::BadRequest("limit must be >= 1".into()));
    }
    let found = search_entities(&st.model.vocabulary, &p.q, p.entity_type.as_deref(), limit);
    Ok(Json(api::EntityList { entities: found }))
}

async fn query(
    kind: QueryKind,
    State(st): State<AppState>,
    payload: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let req = body(payload)?;
    run_query(&st.model, kind, &req).map(Json)
}

async fn create_session(
    State(st): State<AppState>,
    payload: Result<Json<api::SessionRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let req = body(payload)?;
    let anchor = api::resolve_names(&st.model.vocabulary, std::slice::from_ref(&req.entity))?[0];
    let mut session = BrowseSession32::start(&st.model, anchor)?;
    if req.cosine {
        session = session.with_similarity(Similarity::Cosine);
    }
    let session_id = st.sessions.insert(session);
    Ok((StatusCode::CREATED, Json(api::SessionCreated { session_id })))
}

fn lookup(st: &AppState, id: &str) -> Result<sessions::SharedSession, ApiError> {
    st.sessions.get(id).ok_or_else(|| ApiError::UnknownSession(id.to_owned()))
}

fn summary(st: &AppState, id: &str, session: &BrowseSession32) -> api::TrailSummary {
    let vocab = &st.model.vocabulary;
    let names = |ids: &[kgsq_core::EntityId]| {
        ids.iter()
            .map(|e| vocab.entity_name(*e).unwrap_or_default().to_owned())
            .collect()
    };
    api::TrailSummary {
        session_id: id.to_owned(),
        anchor: vocab.entity_name(session.origin()).unwrap_or_default().to_owned(),
        steps: session
            .trail()
            .iter()
            .map(|s| api::TrailStep {
                positives: names(&s.positives),
                negatives: names(&s.negatives),
                k: s.k,
                type_filter: s.type_filter.clone(),
                results: QueryResponse::from_ranked(&s.results, vocab).results,
            })
            .collect(),
    }
}

async fn session_summary(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<api::TrailSummary>, ApiError> {
    let shared = lookup(&st, &id)?;
    let session = shared.lock().unwrap_or_else(|p| p.into_inner());
    Ok(Json(summary(&st, &id, &session)))
}

async fn session_step(
    State(st): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<api::StepRequest>, JsonRejection>,
) -> Result<Json<api::StepResponse>, ApiError> {
    let shared = lookup(&st, &id)?;
    let req = body(payload)?;
    let vocab = &st.model.vocabulary;
    let pos = api::resolve_names(vocab, &req.positives)?;
    let neg = api::resolve_names(vocab, &req.negatives)?;
    let mut session = shared.lock().unwrap_or_else(|p| p.into_inner());
    let list = session.step(&st.model, &pos, &neg, req.k, req.type_filter.as_deref())?;
    let results = QueryResponse::from_ranked(list, vocab).results;
    Ok(Json(api::StepResponse {
        step: session.trail().len(),
        results,
    }))
}

async fn session_back(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<api::TrailSummary>, ApiError> {
    let shared = lookup(&st, &id)?;
    let mut session = shared.lock().unwrap_or_else(|p| p.into_inner());
    session.back()?;
    Ok(Json(summary(&st, &id, &session)))
}
