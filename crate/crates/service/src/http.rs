//! JSON API and static file routes.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::header;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::error::{io, Result, ServiceError};
use crate::service::RatingService;
use crate::session::{Ack, NextItem, SessionSummary};

type Shared = Arc<RatingService>;

#[derive(Debug, Deserialize)]
pub struct StartRequest {
    pub subject_id: String,
}

#[derive(Debug, Deserialize)]
pub struct RatingRequest {
    pub image_id: String,
    pub rating: i64,
}

const PLACEHOLDER: &str = "<!doctype html><title>harmony rating service</title>\
<p>The rating API is running. Start with <code>POST /api/session</code>.</p>";

async fn start(State(svc): State<Shared>, Json(req): Json<StartRequest>) -> Result<Json<SessionSummary>> {
    Ok(Json(svc.start_session(&req.subject_id)?))
}

async fn summary(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionSummary>> {
    Ok(Json(svc.summary(&id)?))
}

async fn next(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Json<NextItem>> {
    Ok(Json(svc.next_item(&id)?))
}

async fn rate(State(svc): State<Shared>, Path(id): Path<String>, Json(req): Json<RatingRequest>) -> Result<Json<Ack>> {
    // The append ends in an fsync; keep it off the async workers.
    let ack = tokio::task::spawn_blocking(move || svc.submit_rating(&id, &req.image_id, req.rating))
        .await
        .map_err(|e| ServiceError::Corrupt(format!("rating task failed: {e}")))??;
    Ok(Json(ack))
}

async fn image(State(svc): State<Shared>, Path((image_id, role)): Path<(String, String)>) -> Result<Response> {
    let path = svc.image_path(&image_id, &role)?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| io(&path, e))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

/// Builds the application. With `static_dir` the UI assets are served at `/`;
/// without it `/` shows a short placeholder page.
pub fn router(svc: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", post(start))
        .route("/api/session/{id}", get(summary))
        .route("/api/session/{id}/next", get(next))
        .route("/api/session/{id}/rating", post(rate))
        .route("/img/{image_id}/{role}", get(image))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
