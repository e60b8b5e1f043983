//! HTTP+JSON routes over [`Service`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::service::{CreateSession, ResponseSubmission, Service};
use crate::{SessionError, SCHEMA_VERSION};

impl SessionError {
    pub fn status(&self) -> StatusCode {
        match self {
            SessionError::UnknownExperiment(_)
            | SessionError::UnknownSession(_)
            | SessionError::UnknownStimulus(_)
            | SessionError::AudioMissing(_) => StatusCode::NOT_FOUND,
            SessionError::MissingDemographics(_) | SessionError::InvalidResponse(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SessionError::BadVersion(_) => StatusCode::BAD_REQUEST,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::PlaybackLimit(_) => StatusCode::FORBIDDEN,
            SessionError::Config(_) | SessionError::CorruptLog { .. } | SessionError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let mut body = json!({ "v": SCHEMA_VERSION, "error": self.to_string() });
        if let SessionError::MissingDemographics(fields) = &self {
            body["missing"] = json!(fields);
        }
        (self.status(), Json(body)).into_response()
    }
}

fn bad_request(msg: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "v": SCHEMA_VERSION, "error": msg }))).into_response()
}

/// Parses a JSON body ourselves so malformed input gets the versioned error
/// shape instead of axum's plain-text rejection.
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, String> {
    serde_json::from_slice(body).map_err(|e| format!("malformed body: {e}"))
}

async fn create_session(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: CreateSession = match parse(&body) {
        Ok(r) => r,
        Err(msg) => return bad_request(msg),
    };
    match svc.create_session(&id, req) {
        Ok(s) => (StatusCode::CREATED, Json(s)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn next_trial(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.next_trial(&id) {
        Ok(n) => Json(n).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> Response {
    let sub: ResponseSubmission = match parse(&body) {
        Ok(r) => r,
        Err(msg) => return bad_request(msg),
    };
    match svc.submit_response(&id, sub) {
        Ok(a) => Json(a).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct AudioQuery {
    session: Option<String>,
}

async fn audio(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Query<AudioQuery>) -> Response {
    let Some(session) = q.session else {
        return bad_request("audio requests need a session query parameter".into());
    };
    match svc.fetch_audio(&session, &id) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.export(&id) {
        Ok(text) => ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/experiments/{id}/sessions", post(create_session))
        .route("/experiments/{id}/export", get(export))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit))
        .route("/audio/{id}", get(audio))
        .with_state(service)
}

/// Serves until the listener fails.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
