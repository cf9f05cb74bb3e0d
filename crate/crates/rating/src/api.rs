use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use slidereport_core::stats::{Score, NEED_MORE_INFO};

use crate::mosaic::{build_mosaic, MOSAIC_DOWNSAMPLE};
use crate::store::{PartCandidates, Progress, RatingStore, RatingTask, SessionState};
use crate::RatingError;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RatingStore>,
    /// Tiler output root holding `<slide_id>/index.jsonl` and patch PNGs.
    pub patches_root: Option<PathBuf>,
    pub bearer_token: Option<String>,
}

impl IntoResponse for RatingError {
    fn into_response(self) -> Response {
        let status = match &self {
            RatingError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RatingError::NotFound(_) => StatusCode::NOT_FOUND,
            RatingError::Unauthorized => StatusCode::UNAUTHORIZED,
            RatingError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct CreateSession {
    rater_id: String,
    #[serde(default)]
    seed: u64,
    parts: Vec<PartCandidates>,
}

#[derive(Serialize)]
struct SessionSummary {
    session_id: String,
    rater_id: String,
    progress: Progress,
}

impl From<&SessionState> for SessionSummary {
    fn from(s: &SessionState) -> Self {
        SessionSummary { session_id: s.session_id.clone(), rater_id: s.rater_id.clone(), progress: s.progress() }
    }
}

#[derive(Serialize)]
struct TaskView {
    #[serde(flatten)]
    task: RatingTask,
    mosaics: Vec<String>,
}

impl From<RatingTask> for TaskView {
    fn from(task: RatingTask) -> Self {
        let mosaics = task.slide_ids.iter().map(|s| format!("/parts/{}/mosaic/{s}", task.part_id)).collect();
        TaskView { task, mosaics }
    }
}

#[derive(Serialize)]
struct NextResponse {
    session_id: String,
    done: bool,
    progress: Progress,
    task: Option<TaskView>,
}

#[derive(Serialize)]
struct Ack {
    ok: bool,
    revision: u32,
    progress: Progress,
}

async fn create_session(
    State(app): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionSummary>), RatingError> {
    let store = app.store.clone();
    let s = tokio::task::spawn_blocking(move || store.create_session(&body.parts, &body.rater_id, body.seed))
        .await
        .map_err(|e| RatingError::Storage(e.to_string()))??;
    log::info!("session {} for rater {} ({} texts, seed {})", s.session_id, s.rater_id, s.n_tasks(), s.seed);
    Ok((StatusCode::CREATED, Json(SessionSummary::from(&*s))))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSummary>, RatingError> {
    Ok(Json(SessionSummary::from(&*app.store.session(&id)?)))
}

async fn next_task(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<NextResponse>, RatingError> {
    let s = app.store.session(&id)?;
    let task = s.next_task();
    Ok(Json(NextResponse { session_id: id, done: task.is_none(), progress: s.progress(), task: task.map(TaskView::from) }))
}

async fn task_at(
    State(app): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
) -> Result<Json<TaskView>, RatingError> {
    let s = app.store.session(&id)?;
    s.task_at(index)
        .map(|t| Json(TaskView::from(t)))
        .ok_or_else(|| RatingError::NotFound(format!("task {index}")))
}

fn parse_score(v: &serde_json::Value) -> Result<Score, RatingError> {
    match v {
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => Score::new(i).map_err(|e| RatingError::Invalid(e.to_string())),
            None => Err(RatingError::Invalid(format!("score {n} is not an integer"))),
        },
        serde_json::Value::String(s) if s == NEED_MORE_INFO => Ok(Score::NeedMoreInfo),
        other => Err(RatingError::Invalid(format!("invalid score {other}"))),
    }
}

async fn submit_rating(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<serde_json::Value>,
) -> Result<Json<Ack>, RatingError> {
    let field = |k: &str| {
        body.get(k)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| RatingError::Invalid(format!("missing string field {k}")))
    };
    let part_id = field("part_id")?;
    let blinded = field("blinded_text_id")?;
    let score = parse_score(body.get("score").ok_or_else(|| RatingError::Invalid("missing score".into()))?)?;
    let comment = body.get("comment").and_then(|v| v.as_str()).unwrap_or("").to_string();
    let store = app.store.clone();
    let sid = id.clone();
    let revision = tokio::task::spawn_blocking(move || store.submit_rating(&sid, &part_id, &blinded, score, &comment))
        .await
        .map_err(|e| RatingError::Storage(e.to_string()))??;
    Ok(Json(Ack { ok: true, revision, progress: app.store.session(&id)?.progress() }))
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, RatingError> {
    let body = app.store.session(&id)?.export_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn mosaic(
    State(app): State<AppState>,
    Path((part_id, slide_id)): Path<(String, String)>,
) -> Result<Response, RatingError> {
    let root = app.patches_root.clone().ok_or_else(|| RatingError::NotFound("no patch directory configured".into()))?;
    let slides = app.store.part_slides(&part_id).ok_or_else(|| RatingError::NotFound(format!("part {part_id}")))?;
    if !slides.contains(&slide_id) {
        return Err(RatingError::NotFound(format!("slide {slide_id} of part {part_id}")));
    }
    let png = tokio::task::spawn_blocking(move || build_mosaic(&root.join(&slide_id), MOSAIC_DOWNSAMPLE))
        .await
        .map_err(|e| RatingError::Storage(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

/// Accepts `Authorization: Bearer <token>` or, for image tags, `?token=`.
async fn require_token(
    State(app): State<AppState>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    if let Some(expected) = &app.bearer_token {
        let from_header = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if from_header != Some(expected.as_str()) && q.token.as_deref() != Some(expected.as_str()) {
            return RatingError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_task))
        .route("/sessions/{id}/tasks/{index}", get(task_at))
        .route("/sessions/{id}/ratings", post(submit_rating))
        .route("/sessions/{id}/export", get(export))
        .route("/parts/{id}/mosaic/{slide}", get(mosaic))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("rating service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
