//! Local HTTP/JSON facade over the engine: open a session with a draft post,
//! fetch and accept suggestions, finalize into the masked publish queue, and
//! read the adversary and tree views.

mod engine;
mod error;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use aegis_core::suggest::PendingPost;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

pub use engine::{FinalizeView, HealthView, QueueView, Service, ServiceConfig, SessionState, SessionView};
pub use error::ApiError;

/// Loopback only; there is no authentication.
pub const DEFAULT_ADDR: &str = "127.0.0.1:8731";

type Shared = Arc<Service>;
type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenRequest {
    pub topics: Vec<String>,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptRequest {
    pub topic: String,
}

#[derive(Debug, Deserialize)]
struct TreeQuery {
    #[serde(default)]
    full: bool,
}

async fn open(
    State(svc): State<Shared>,
    body: Result<Json<OpenRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let view = svc.open_session(PendingPost {
        topics: req.topics,
        text: req.text,
    })?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn show(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionView> {
    Ok(Json(svc.get_session(&id)?))
}

async fn close(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    svc.close_session(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn suggestions(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<aegis_core::suggest::SuggestionSet> {
    Ok(Json(svc.suggestions(&id)?))
}

async fn accept(
    State(svc): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<AcceptRequest>, JsonRejection>,
) -> ApiResult<SessionView> {
    let Json(req) = body?;
    Ok(Json(svc.accept(&id, &req.topic)?))
}

async fn finalize(State(svc): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<FinalizeView> {
    Ok(Json(svc.finalize(&id)?))
}

async fn adversary(State(svc): State<Shared>) -> ApiResult<aegis_core::inference::InferenceReport> {
    Ok(Json(svc.adversary_report()?))
}

async fn tree(State(svc): State<Shared>, Query(q): Query<TreeQuery>) -> ApiResult<aegis_core::taxonomy::TreeView> {
    Ok(Json(svc.tree(q.full)?))
}

async fn queue(State(svc): State<Shared>) -> Json<QueueView> {
    Json(svc.queue())
}

async fn health(State(svc): State<Shared>) -> Json<HealthView> {
    Json(svc.health())
}

/// All endpoints, plus static files from `static_dir` for anything else.
pub fn router(service: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/session", post(open))
        .route("/session/{id}", get(show).delete(close))
        .route("/session/{id}/suggestions", get(suggestions))
        .route("/session/{id}/accept", post(accept))
        .route("/session/{id}/finalize", post(finalize))
        .route("/adversary", get(adversary))
        .route("/tree", get(tree))
        .route("/queue", get(queue))
        .route("/health", get(health))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(service: Shared, addr: SocketAddr, static_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service, static_dir)).await
}
