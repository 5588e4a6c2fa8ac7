//! HTTP API over a review store.
//!
//! Reads share the store; verdict writes take the write lock, so they are
//! applied one at a time and a report never sees half a write.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::review::{ReviewError, ReviewStore, Verdict};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::RwLock;

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1000;

pub struct AppState {
    pub store: RwLock<ReviewStore>,
    pub images: Option<PathBuf>,
}

pub type Shared = Arc<AppState>;

pub fn router(store: ReviewStore, images: Option<PathBuf>) -> Router {
    let state = Arc::new(AppState {
        store: RwLock::new(store),
        images,
    });
    Router::new()
        .route("/items", get(list_items))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/image", get(get_image))
        .route("/items/{id}/mask", get(get_mask))
        .route("/items/{id}/verdict", post(post_verdict))
        .route("/report", get(get_report))
        .with_state(state)
}

struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn new(status: StatusCode, message: impl std::fmt::Display) -> Self {
        ApiError(status, json!({ "error": message.to_string() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match &e {
            ReviewError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, e),
            ReviewError::Conflict { current, .. } => ApiError(
                StatusCode::CONFLICT,
                json!({ "error": e.to_string(), "current": current }),
            ),
            ReviewError::PendingVerdict => ApiError::new(StatusCode::BAD_REQUEST, e),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e),
        }
    }
}

fn parse_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown item {raw}")))
}

#[derive(Deserialize)]
struct ListParams {
    status: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list_items(State(s): State<Shared>, Query(p): Query<ListParams>) -> Result<Response, ApiError> {
    let status = match p.status.as_deref() {
        None | Some("all") => None,
        Some(raw) => Some(
            Verdict::parse(raw).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown status {raw}")))?,
        ),
    };
    let limit = p.limit.unwrap_or(DEFAULT_LIMIT).min(MAX_LIMIT);
    let offset = p.offset.unwrap_or(0);
    let store = s.store.read().await;
    let total = store.items().iter().filter(|i| status.is_none_or(|v| i.verdict == v)).count();
    let items = store.list(status, offset, limit);
    Ok(Json(json!({ "items": items, "limit": limit, "offset": offset, "total": total })).into_response())
}

async fn get_item(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let store = s.store.read().await;
    let item = store.get(id).ok_or(ReviewError::NotFound(id))?;
    Ok(Json(json!({ "history": store.history(id), "item": item })).into_response())
}

async fn get_mask(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let store = s.store.read().await;
    let item = store.get(id).ok_or(ReviewError::NotFound(id))?;
    Ok(Json(&item.rle).into_response())
}

/// Joins `rel` under `root`, refusing anything that could escape it.
fn confined(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.components().all(|c| matches!(c, Component::Normal(_))) {
        Some(root.join(rel))
    } else {
        None
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn get_image(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let image_ref = {
        let store = s.store.read().await;
        store.get(id).ok_or(ReviewError::NotFound(id))?.image_ref.clone()
    };
    let root = s
        .images
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no image directory configured"))?;
    let path = confined(root, &image_ref)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("image {image_ref} is outside the image directory")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("image {image_ref} not found")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

#[derive(Deserialize)]
struct VerdictParams {
    #[serde(default)]
    force: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: Verdict,
    #[serde(default)]
    note: Option<String>,
}

async fn post_verdict(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(p): Query<VerdictParams>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let id = parse_id(&id)?;
    let body: VerdictBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    let mut store = s.store.write().await;
    let item = store.submit(id, body.verdict, body.note, p.force)?;
    Ok(Json(item).into_response())
}

#[derive(Deserialize)]
struct ReportParams {
    format: Option<String>,
}

async fn get_report(State(s): State<Shared>, Query(p): Query<ReportParams>) -> Response {
    let report = s.store.read().await.report();
    match p.format.as_deref() {
        Some("text") => report.render_table().into_response(),
        _ => Json(report).into_response(),
    }
}

/// Serves until ctrl-c.
pub async fn serve(store: ReviewStore, images: Option<PathBuf>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review API listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, images))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
