//! HTTP/JSON routes. Mutations run on the blocking pool under the session's writer
//! lock; reads serve the latest published snapshot.

use std::ops::Range;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tabsight_core::insight::{InsightKind, InsightRecord};
use tabsight_core::table::{HeadingTree, NodeId, RecordId};
use tabsight_core::transform::AggregateFn;
use tabsight_core::{ActionKind, Metrics, TableDocument};

use crate::session::{InsightCues, Session, SessionError, Tombstone};
use crate::store::SessionStore;

pub type AppState = Arc<SessionStore>;

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/recommend", post(recommend))
        .route("/sessions/{id}/insights", post(add_insight))
        .route("/sessions/{id}/insights/{iid}", delete(remove_insight))
        .route("/sessions/{id}/insights/{iid}/alternatives", get(alternatives))
        .route("/sessions/{id}/insights/{iid}/replace", post(replace_insight))
        .route("/sessions/{id}/transform", post(transform))
        .route("/sessions/{id}/export", get(export))
        .with_state(store)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

pub struct ApiError(pub SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use SessionError::*;
        let (status, code) = match &self.0 {
            SessionNotFound(_) | InsightNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Schema { .. } | Table(_) => (StatusCode::BAD_REQUEST, "invalid_document"),
            BadRequest(_) | BudgetTooLarge(..) => (StatusCode::BAD_REQUEST, "bad_request"),
            Unresolvable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "unresolvable_block"),
            NotApplicable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "not_applicable"),
            Overlap => (StatusCode::CONFLICT, "overlap"),
            RunInProgress => (StatusCode::CONFLICT, "run_in_progress"),
            Run(_) | Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let path = match &self.0 {
            Schema { path, .. } => Some(path.clone()),
            _ => None,
        };
        (status, Json(ErrorBody { error: code, message: self.0.to_string(), path })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, SessionError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| SessionError::Schema { path: e.path().to_string(), message: e.inner().to_string() })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, SessionError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(SessionError::Run(e.to_string())))?.map_err(ApiError)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeView {
    pub id: NodeId,
    pub label: String,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub children: Vec<NodeId>,
    pub leaves: Range<usize>,
}

fn nodes(tree: &HeadingTree) -> Vec<NodeView> {
    tree.nodes()
        .iter()
        .map(|n| NodeView {
            id: n.id,
            label: n.label.clone(),
            parent: n.parent,
            depth: n.depth,
            children: n.children.clone(),
            leaves: n.leaves.clone(),
        })
        .collect()
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Selection {
    pub row: NodeId,
    pub col: NodeId,
}

/// Everything the UI renders: layout, values, mask, ledger, metrics and cue layers.
#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub id: String,
    pub revision: u64,
    pub document: TableDocument,
    pub rows: Vec<NodeView>,
    pub cols: Vec<NodeView>,
    pub selection: Selection,
    /// Record id embedded in each cell, row-major.
    pub viz: Vec<Vec<Option<RecordId>>>,
    pub ledger: Vec<InsightRecord>,
    pub metrics: Metrics,
    pub tombstones: Vec<Tombstone>,
    pub cues: Vec<InsightCues>,
    pub recommender: String,
}

fn view(store: &SessionStore, s: &Session) -> SessionView {
    let state = s.state();
    let grid = state.grid();
    SessionView {
        id: s.id().to_string(),
        revision: s.revision(),
        document: s.data().document.clone(),
        rows: nodes(state.row_tree()),
        cols: nodes(state.col_tree()),
        selection: Selection { row: state.row_tree().selected(), col: state.col_tree().selected() },
        viz: (0..grid.rows()).map(|r| (0..grid.cols()).map(|c| grid.get(r, c).viz).collect()).collect(),
        ledger: s.ledger().to_vec(),
        metrics: s.metrics().clone(),
        tombstones: s.tombstones().to_vec(),
        cues: s.cues(&store.engine().detectors),
        recommender: store.recommender().name().to_string(),
    }
}

async fn create_session(State(store): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    blocking(move || {
        let doc = crate::session::AnnotatedDocument::parse(&body)?;
        let session = store.create(doc)?;
        Ok((StatusCode::CREATED, Json(view(&store, &session))))
    })
    .await
}

async fn get_session(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        let s = store.snapshot(&id)?;
        Ok(Json(view(&store, &s)))
    })
    .await
}

#[derive(Deserialize)]
struct RecommendQuery {
    budget: Option<usize>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RecommendResponse {
    pub revision: u64,
    pub added: Vec<InsightRecord>,
    pub metrics: Metrics,
}

async fn recommend(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RecommendQuery>,
) -> ApiResult<Json<RecommendResponse>> {
    let budget = q.budget.unwrap_or(store.engine().episode.total_steps);
    blocking(move || {
        let (added, s) = store.recommend(&id, budget)?;
        Ok(Json(RecommendResponse { revision: s.revision(), added, metrics: s.metrics().clone() }))
    })
    .await
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsResponse {
    pub revision: u64,
    pub metrics: Metrics,
}

async fn remove_insight(
    State(store): State<AppState>,
    Path((id, iid)): Path<(String, u64)>,
) -> ApiResult<Json<MetricsResponse>> {
    blocking(move || {
        let s = store.remove_insight(&id, RecordId(iid))?;
        Ok(Json(MetricsResponse { revision: s.revision(), metrics: s.metrics().clone() }))
    })
    .await
}

async fn alternatives(
    State(store): State<AppState>,
    Path((id, iid)): Path<(String, u64)>,
) -> ApiResult<Json<Vec<InsightRecord>>> {
    blocking(move || Ok(Json(store.alternatives(&id, RecordId(iid))?))).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplaceBody {
    kind: InsightKind,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerResponse {
    pub revision: u64,
    pub ledger: Vec<InsightRecord>,
    pub metrics: Metrics,
}

async fn replace_insight(
    State(store): State<AppState>,
    Path((id, iid)): Path<(String, u64)>,
    body: Bytes,
) -> ApiResult<Json<LedgerResponse>> {
    blocking(move || {
        let ReplaceBody { kind } = parse_body(&body)?;
        let s = store.replace_insight(&id, RecordId(iid), kind)?;
        Ok(Json(LedgerResponse { revision: s.revision(), ledger: s.ledger().to_vec(), metrics: s.metrics().clone() }))
    })
    .await
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ManualBody {
    row_entry: NodeId,
    col_entry: NodeId,
    kind: InsightKind,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordResponse {
    pub revision: u64,
    pub record: InsightRecord,
    pub metrics: Metrics,
}

async fn add_insight(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<RecordResponse>)> {
    blocking(move || {
        store.get(&id)?;
        let b: ManualBody = parse_body(&body)?;
        let (record, s) = store.add_manual_insight(&id, b.row_entry, b.col_entry, b.kind)?;
        Ok((StatusCode::CREATED, Json(RecordResponse { revision: s.revision(), record, metrics: s.metrics().clone() })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformBody {
    action: ActionKind,
    #[serde(default)]
    aggregate: Option<AggregateFn>,
}

async fn transform(State(store): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        store.get(&id)?;
        let b: TransformBody = parse_body(&body)?;
        let s = store.transform(&id, b.action, b.aggregate)?;
        Ok(Json(view(&store, &s)))
    })
    .await
}

async fn export(
    State(store): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<crate::session::AnnotatedDocument>> {
    blocking(move || Ok(Json(store.snapshot(&id)?.annotated_export()))).await
}
