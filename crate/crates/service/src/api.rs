//! JSON wire types shared by the HTTP service and the command-line client.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use kgsq_core::graph::{EntityId, Vocabulary};
use kgsq_core::{QueryError, RankedList32};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub entity: String,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none", default)]
    pub entity_type: Option<String>,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<ResultRow>,
}

impl QueryResponse {
    pub fn from_ranked(list: &RankedList32, vocab: &Vocabulary) -> Self {
        let results = list
            .iter()
            .map(|r| ResultRow {
                entity: vocab.entity_name(r.entity).unwrap_or_default().to_owned(),
                entity_type: vocab.entity_type(r.entity).map(str::to_owned),
                score: r.score,
            })
            .collect();
        Self { results }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub entity: String,
    #[serde(default)]
    pub positives: Vec<String>,
    #[serde(default)]
    pub negatives: Vec<String>,
    pub k: usize,
    #[serde(default)]
    pub type_filter: Option<String>,
    #[serde(default)]
    pub exclude_self: Option<bool>,
    #[serde(default)]
    pub cosine: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub entity: String,
    #[serde(default)]
    pub cosine: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    #[serde(default)]
    pub positives: Vec<String>,
    #[serde(default)]
    pub negatives: Vec<String>,
    pub k: usize,
    #[serde(default)]
    pub type_filter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    /// 1-based position of this step in the trail.
    pub step: usize,
    pub results: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailStep {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub type_filter: Option<String>,
    pub results: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailSummary {
    pub session_id: String,
    pub anchor: String,
    pub steps: Vec<TrailStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityHit {
    pub name: String,
    pub id: usize,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none", default)]
    pub entity_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityList {
    pub entities: Vec<EntityHit>,
}

/// Case-insensitive substring search ordered by match position, then name.
pub fn search_entities(vocab: &Vocabulary, q: &str, type_filter: Option<&str>, limit: usize) -> Vec<EntityHit> {
    if q.is_empty() || limit == 0 {
        return Vec::new();
    }
    let needle = q.to_lowercase();
    let mut hits: Vec<(usize, &str, usize)> = vocab
        .entity_names()
        .iter()
        .enumerate()
        .filter(|(i, _)| vocab.matches_type(EntityId(*i), type_filter))
        .filter_map(|(i, name)| {
            let pos = name.to_lowercase().find(&needle)?;
            Some((pos, name.as_str(), i))
        })
        .collect();
    hits.sort_unstable();
    hits.truncate(limit);
    hits.into_iter()
        .map(|(_, name, i)| EntityHit {
            name: name.to_owned(),
            id: i,
            entity_type: vocab.entity_type(EntityId(i)).map(str::to_owned),
        })
        .collect()
}

/// Resolves names to ids, failing on the first unknown one.
pub fn resolve_names(vocab: &Vocabulary, names: &[String]) -> Result<Vec<EntityId>, ApiError> {
    names
        .iter()
        .map(|n| vocab.entity_id(n).ok_or_else(|| ApiError::UnknownEntity(n.clone())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiError {
    UnknownEntity(String),
    UnknownSession(String),
    BadRequest(String),
    AtSessionStart,
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownEntity(_) | ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::AtSessionStart => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> serde_json::Value {
        match self {
            ApiError::UnknownEntity(name) => json!({"error": "unknown_entity", "name": name}),
            ApiError::UnknownSession(id) => json!({"error": "unknown_session", "session_id": id}),
            ApiError::BadRequest(msg) => json!({"error": "bad_request", "message": msg}),
            ApiError::AtSessionStart => json!({"error": "at_session_start"}),
            ApiError::Internal(msg) => json!({"error": "internal", "message": msg}),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::AtSessionStart => ApiError::AtSessionStart,
            QueryError::ZeroK | QueryError::UnexpectedBias(_) | QueryError::InvalidEntity(..) => {
                ApiError::BadRequest(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
