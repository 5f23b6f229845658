use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio_stream::wrappers::{UnboundedReceiverStream, WatchStream};
use tokio_stream::{Stream, StreamExt};

use super::{CreateSession, Service};
use crate::engine::{ClientEvent, StreamEvent};
use crate::error::GatewayError;

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "bad_request", message: message.into() }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        use bloom_core::Error as Core;
        let (status, kind) = match &e {
            GatewayError::UnknownSession(_) => (StatusCode::NOT_FOUND, "not_found"),
            GatewayError::Core(Core::ProtocolViolation(_)) => (StatusCode::CONFLICT, "protocol_violation"),
            GatewayError::Core(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            GatewayError::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            GatewayError::Connection(_) | GatewayError::TooManyMalformed { .. } => (StatusCode::BAD_REQUEST, "source"),
            GatewayError::SessionClosed(_) | GatewayError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let message = match e {
            GatewayError::Core(Core::ProtocolViolation(m)) => m,
            other => other.to_string(),
        };
        Self { status, kind, message }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "accepted": false, "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/questionnaires", get(questionnaires))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(fetch))
        .route("/sessions/{id}/events", post(events))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/log", get(log))
        .with_state(service)
}

async fn questionnaires(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(svc.questionnaires().clone())
}

async fn create(
    State(svc): State<Arc<Service>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let handle = svc.create_session(req).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": handle.id, "plan": handle.plan }))))
}

async fn list(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(svc.list())
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    #[serde(flatten)]
    snapshot: crate::engine::Snapshot,
}

async fn fetch(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let handle = svc.session(&id)?;
    let snapshot = handle.snapshot().await?;
    Ok(Json(SessionView { session_id: id, snapshot }))
}

async fn events(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Result<Json<ClientEvent>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(event) = body?;
    let t_ms = svc.session(&id)?.submit(event).await?;
    Ok(Json(json!({ "accepted": true, "t_ms": t_ms })))
}

async fn advance(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let stage = svc.session(&id)?.advance().await?;
    Ok(Json(json!({ "accepted": true, "stage": stage })))
}

async fn log(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let text = svc.session(&id)?.log_text().await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text))
}

async fn stream(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let (events, frames) = svc.session(&id)?.subscribe().await?;
    let frames = WatchStream::from_changes(frames).filter_map(|f| f.map(StreamEvent::GuideFrame));
    let merged = UnboundedReceiverStream::new(events)
        .merge(frames)
        .map(|e| Ok(Event::default().event(e.name()).data(e.data_json())));
    Ok(Sse::new(merged).keep_alive(KeepAlive::default()))
}
