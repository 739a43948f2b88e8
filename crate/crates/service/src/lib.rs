//! HTTP service for blind ranking studies over concept-blend batches, plus a
//! small generation endpoint for interactive exploration.
//!
//! Endpoints (all bodies JSON unless noted):
//!
//! | method | path | purpose |
//! |---|---|---|
//! | POST | `/sessions` | create or resume a participant session |
//! | GET | `/sessions/{id}/next` | next pending pair with opaque image positions |
//! | GET | `/sessions/{id}/tasks/{index}/images/{position}` | PNG shown at a position |
//! | POST | `/sessions/{id}/rankings` | submit ranks for the displayed positions |
//! | GET | `/export/{batch}` | ranking dataset (text) |
//! | POST | `/generate` | run one blend on the configured backend (cached) |
//! | GET | `/generated/{key}/image.png` | image of a cached generation |
//!
//! Method identity never appears in a study response: images are addressed by
//! task index and display position only.

mod http;
pub mod store;
pub mod study;

use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

pub use http::{router, serve, AppState, GenerateRequest, GenerateResponse};
pub use study::{method_ranks, presentation_order, Session, StudyBatch, StudyService, Task};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Event log, snapshots and the generation cache live here.
    pub data_dir: PathBuf,
    /// Parent of the batch output directories; a batch id is a subdirectory name.
    pub batches_dir: PathBuf,
    /// Keys the per-participant presentation orders.
    pub secret: String,
    /// Which seed's images are shown; defaults to the batch's first seed.
    pub display_seed: Option<u64>,
    /// Write a snapshot after this many logged events.
    pub snapshot_every: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, batches_dir: impl Into<PathBuf>, secret: impl Into<String>) -> Self {
        Self {
            data_dir: data_dir.into(),
            batches_dir: batches_dir.into(),
            secret: secret.into(),
            display_seed: None,
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("nothing to export: {0}")]
    Empty(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Empty(_) => StatusCode::NOT_FOUND,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<conceptblend::Error> for ServiceError {
    fn from(e: conceptblend::Error) -> Self {
        use conceptblend::Error as E;
        match e {
            E::Io { .. } | E::Json(_) | E::Image(_) | E::Csv(_) => ServiceError::Internal(e.to_string()),
            other => ServiceError::Invalid(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if matches!(self, ServiceError::Internal(_)) {
            log::error!("{self}");
        }
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
