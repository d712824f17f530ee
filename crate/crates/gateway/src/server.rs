//! HTTP review service.

use std::collections::BTreeMap;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use labelshed::triage::{Aggregate, ItemStatus, MistakeCategory, ReviewItem, ReviewVerdict, Severity};
use labelshed::ClassId;

use crate::classes::ClassCatalog;
use crate::session::{Session, SessionError, SessionState};

pub struct AppState {
    pub session: RwLock<Session>,
    pub classes: Option<ClassCatalog>,
    pub image_root: Option<PathBuf>,
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/queue/next", get(queue_next))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/votes", post(post_vote))
        .route("/api/items/{id}/finalize", post(post_finalize))
        .route("/api/classes/{index}", get(get_class))
        .route("/api/images/{*image_id}", get(get_image))
        .route("/api/progress", get(progress))
        .with_state(state)
}

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        use labelshed::Error as E;
        let status = match &self {
            SessionError::UnknownItem(_) | SessionError::UnknownSession(_) | SessionError::NotFound(_) => {
                StatusCode::NOT_FOUND
            }
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Core(e) => match e {
                E::AlreadyFinalized { .. } | E::MergeConflict { .. } => StatusCode::CONFLICT,
                E::InvalidVote(_) | E::InvalidDecision(_) | E::InvalidArgument(_) | E::ClassOutOfRange { .. } => {
                    StatusCode::BAD_REQUEST
                }
                E::UnknownImage(_) => StatusCode::NOT_FOUND,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            SessionError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, SessionError>;

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: Option<String>,
    reviewer: Option<String>,
}

fn check_session(state: &SessionState, session: Option<&str>) -> ApiResult<()> {
    match session {
        None => Err(SessionError::BadRequest("missing session parameter".into())),
        Some(s) if s != state.session_id => Err(SessionError::UnknownSession(s.to_owned())),
        Some(_) => Ok(()),
    }
}

fn parse_index(id: &str) -> ApiResult<usize> {
    id.parse().map_err(|_| SessionError::UnknownItem(id.to_owned()))
}

#[derive(Debug, Serialize)]
struct VoteView {
    reviewer: String,
    verdict: ReviewVerdict,
    round: u32,
}

/// Everything a review card shows for one queue entry.
#[derive(Debug, Serialize)]
struct ItemView {
    id: usize,
    image_id: String,
    image_url: String,
    predicted_class: ClassId,
    score: f64,
    ground_truth: Vec<ClassId>,
    prior_wrong: Vec<ClassId>,
    /// Names for every class index above, when class metadata is loaded.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    class_names: BTreeMap<u32, String>,
    status: ItemStatus,
    round: u32,
    panel_size: usize,
    votes_in: usize,
    votes: Vec<VoteView>,
    aggregate: Option<Aggregate>,
}

fn item_view(state: &SessionState, classes: Option<&ClassCatalog>, index: usize, item: &ReviewItem) -> ItemView {
    let mut class_names = BTreeMap::new();
    if let Some(catalog) = classes {
        let all = std::iter::once(&item.predicted_class)
            .chain(&item.ground_truth)
            .chain(&item.prior_wrong);
        for c in all {
            if let Some(name) = catalog.name(c.0) {
                class_names.insert(c.0, name.to_owned());
            }
        }
    }
    let mut votes: Vec<VoteView> = item
        .votes
        .values()
        .map(|v| VoteView {
            reviewer: v.reviewer_id.clone(),
            verdict: v.verdict,
            round: v.round,
        })
        .collect();
    votes.sort_by(|a, b| a.round.cmp(&b.round).then_with(|| a.reviewer.cmp(&b.reviewer)));
    ItemView {
        id: index,
        image_id: item.image_id.clone(),
        image_url: format!("/api/images/{}", item.image_id),
        predicted_class: item.predicted_class,
        score: item.score,
        ground_truth: item.ground_truth.iter().copied().collect(),
        prior_wrong: item.prior_wrong.iter().copied().collect(),
        class_names,
        status: item.status,
        round: item.round,
        panel_size: state.panel.len(),
        votes_in: item.current_votes().len(),
        votes,
        aggregate: last_aggregate(state, item),
    }
}

/// Outcome of the most recent complete round.
fn last_aggregate(state: &SessionState, item: &ReviewItem) -> Option<Aggregate> {
    if let Some(agg) = state.tally(item) {
        return Some(agg);
    }
    if item.round <= 1 {
        return None;
    }
    let previous: Vec<_> = item
        .votes
        .values()
        .filter(|v| v.round == item.round - 1)
        .cloned()
        .collect();
    labelshed::triage::aggregate_votes_with(&previous, state.panel.len(), state.max_rounds).ok()
}

fn read(state: &AppState) -> std::sync::RwLockReadGuard<'_, Session> {
    state.session.read().unwrap_or_else(|e| e.into_inner())
}

fn write(state: &AppState) -> std::sync::RwLockWriteGuard<'_, Session> {
    state.session.write().unwrap_or_else(|e| e.into_inner())
}

async fn queue_next(State(app): State<Shared>, Query(q): Query<SessionQuery>) -> ApiResult<Json<serde_json::Value>> {
    let session = read(&app);
    let state = &session.state;
    check_session(state, q.session.as_deref())?;
    let reviewer = q
        .reviewer
        .as_deref()
        .ok_or_else(|| SessionError::BadRequest("missing reviewer parameter".into()))?;
    match state.next_for(reviewer)? {
        Some(index) => {
            let view = item_view(state, app.classes.as_ref(), index, &state.queue[index]);
            Ok(Json(json!({ "done": false, "item": view })))
        }
        None => {
            let pending = state
                .queue
                .iter()
                .filter(|i| i.status != ItemStatus::Finalized)
                .count();
            Ok(Json(json!({
                "done": true,
                "summary": { "verdicts": state.verdict_counts(), "pending": pending, "total": state.queue.len() },
            })))
        }
    }
}

async fn get_item(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let index = parse_index(&id)?;
    let session = read(&app);
    let state = &session.state;
    let item = state.item(index)?;
    Ok(Json(serde_json::to_value(item_view(state, app.classes.as_ref(), index, item)).expect("serializable")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VoteBody {
    reviewer: String,
    verdict: ReviewVerdict,
    round: u32,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FinalizeBody {
    #[serde(default)]
    verdict: Option<ReviewVerdict>,
    #[serde(default)]
    category: Option<MistakeCategory>,
    #[serde(default)]
    severity: Option<Severity>,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| SessionError::BadRequest(format!("malformed body: {e}")))
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn post_vote(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let index = parse_index(&id)?;
    let mut session = write(&app);
    session.state.item(index)?;
    let body: VoteBody = parse_body(&body)?;
    let staged = session
        .state
        .stage_vote(index, &body.reviewer, body.verdict, body.round, now_millis())?;
    let aggregate = session.apply(staged)?;
    let state = &session.state;
    let view = item_view(state, app.classes.as_ref(), index, &state.queue[index]);
    Ok(Json(json!({ "accepted": true, "round_aggregate": aggregate, "item": view })))
}

async fn post_finalize(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let index = parse_index(&id)?;
    let mut session = write(&app);
    session.state.item(index)?;
    let body: FinalizeBody = if body.is_empty() { FinalizeBody::default() } else { parse_body(&body)? };
    let staged = session
        .state
        .stage_finalize(index, body.verdict, body.category, body.severity)?;
    session.apply(staged)?;
    let state = &session.state;
    let decision = state.decisions.last().expect("just finalized");
    let view = item_view(state, app.classes.as_ref(), index, &state.queue[index]);
    Ok(Json(json!({
        "decision": decision,
        "annotations_version": state.annotations.version(),
        "item": view,
    })))
}

async fn get_class(State(app): State<Shared>, Path(index): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let missing = || SessionError::NotFound(format!("unknown class {index:?}"));
    let i: u32 = index.parse().map_err(|_| missing())?;
    let info = app.classes.as_ref().and_then(|c| c.get(i)).ok_or_else(missing)?;
    Ok(Json(serde_json::to_value(info).expect("serializable")))
}

/// Joins `image_id` onto `root`, refusing anything that could leave it.
pub fn resolve_image(root: &FsPath, image_id: &str) -> Option<PathBuf> {
    if image_id.is_empty() || image_id.contains('\\') || image_id.contains('\0') {
        return None;
    }
    let rel = FsPath::new(image_id);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

fn content_type(path: &FsPath) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("bmp") => "image/bmp",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(app): State<Shared>, Path(image_id): Path<String>) -> ApiResult<Response> {
    let missing = || SessionError::NotFound(format!("unknown image {image_id:?}"));
    let root = app.image_root.as_deref().ok_or_else(missing)?;
    let path = resolve_image(root, &image_id).ok_or_else(missing)?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| missing())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn progress(State(app): State<Shared>, Query(q): Query<SessionQuery>) -> ApiResult<Json<serde_json::Value>> {
    let session = read(&app);
    let state = &session.state;
    check_session(state, q.session.as_deref())?;
    let mut by_status: BTreeMap<&str, usize> =
        [("open", 0), ("awaiting_discussion", 0), ("finalized", 0)].into_iter().collect();
    for item in &state.queue {
        let key = match item.status {
            ItemStatus::Open => "open",
            ItemStatus::AwaitingDiscussion => "awaiting_discussion",
            ItemStatus::Finalized => "finalized",
        };
        *by_status.get_mut(key).expect("seeded") += 1;
    }
    let remaining: BTreeMap<&str, usize> = state
        .panel
        .iter()
        .map(|r| (r.as_str(), state.queue.iter().filter(|i| i.awaits(r)).count()))
        .collect();
    Ok(Json(json!({
        "session": state.session_id,
        "total": state.queue.len(),
        "round": state.round(),
        "panel": state.panel,
        "status": by_status,
        "remaining": remaining,
        "verdicts": state.verdict_counts(),
        "annotations_version": state.annotations.version(),
    })))
}
