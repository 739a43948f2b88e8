use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use conceptblend::pipeline::{generate, BlendConfig, BlendMethod, GenerationManifest};
use conceptblend::unet_routing::BlockSplit;
use conceptblend::ToyBackend;
use serde::{Deserialize, Serialize};

use crate::study::StudyService;
use crate::ServiceError;

#[derive(Clone)]
pub struct AppState {
    pub study: Arc<StudyService>,
    pub backend: ToyBackend,
    /// Serializes generations; the explorer issues one at a time anyway.
    generating: Arc<tokio::sync::Mutex<()>>,
}

impl AppState {
    pub fn new(study: StudyService, backend: ToyBackend) -> Self {
        Self {
            study: Arc::new(study),
            backend,
            generating: Arc::new(tokio::sync::Mutex::new(())),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_task))
        .route("/sessions/{id}/tasks/{index}/images/{position}", get(task_image))
        .route("/sessions/{id}/rankings", post(submit_ranking))
        .route("/export/{batch}", get(export))
        .route("/generate", post(generate_blend))
        .route("/generated/{key}/image.png", get(generated_image))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    participant_id: String,
    batch_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub batch_id: String,
    pub task_count: usize,
    pub completed: usize,
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let (session, created) = app.study.create_session(&req.participant_id, &req.batch_id)?;
    let completed = app.study.completed(&session.session_id).len();
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((
        status,
        Json(SessionView {
            task_count: session.tasks.len(),
            session_id: session.session_id,
            participant_id: session.participant_id,
            batch_id: session.batch_id,
            completed,
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageRef {
    pub position: usize,
    pub url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskView {
    pub index: usize,
    pub pair_id: String,
    pub prompt_1: Option<String>,
    pub prompt_2: Option<String>,
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextView {
    pub session_id: String,
    pub done: bool,
    pub task_count: usize,
    pub completed: usize,
    pub task: Option<TaskView>,
}

async fn next_task(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<NextView>, ServiceError> {
    let session = app.study.session(&id)?;
    let completed = app.study.completed(&id).len();
    let task = app.study.next_task(&id)?.map(|next| {
        let pair = app.study.registry().get(&next.pair_id);
        TaskView {
            images: (0..4)
                .map(|position| ImageRef {
                    position,
                    url: format!("/sessions/{id}/tasks/{}/images/{position}", next.index),
                })
                .collect(),
            index: next.index,
            prompt_1: pair.map(|p| p.prompt_1.clone()),
            prompt_2: pair.map(|p| p.prompt_2.clone()),
            pair_id: next.pair_id,
        }
    });
    Ok(Json(NextView {
        done: task.is_none(),
        session_id: session.session_id,
        task_count: session.tasks.len(),
        completed,
        task,
    }))
}

async fn png(path: &Path) -> Result<Response, ServiceError> {
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn task_image(
    State(app): State<AppState>,
    UrlPath((id, index, position)): UrlPath<(String, usize, usize)>,
) -> Result<Response, ServiceError> {
    let path = app.study.task_image(&id, index, position)?;
    png(&path).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankingSubmission {
    pair_id: String,
    /// Rank (1 = best) of the image at each display position.
    ranking: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankingAck {
    pub pair_id: String,
    pub remaining: usize,
}

async fn submit_ranking(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<RankingSubmission>,
) -> Result<(StatusCode, Json<RankingAck>), ServiceError> {
    app.study.submit_ranking(&id, &req.pair_id, &req.ranking)?;
    let session = app.study.session(&id)?;
    let remaining = session.tasks.len() - app.study.completed(&id).len();
    Ok((
        StatusCode::CREATED,
        Json(RankingAck {
            pair_id: req.pair_id,
            remaining,
        }),
    ))
}

async fn export(State(app): State<AppState>, UrlPath(batch): UrlPath<String>) -> Result<Response, ServiceError> {
    let text = app.study.export_dataset(&batch)?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

/// Blend parameters; omitted fields take the library defaults.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub method: BlendMethod,
    pub prompt_1: String,
    #[serde(default)]
    pub prompt_2: String,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub guidance: Option<f64>,
    pub switch_step: Option<usize>,
    pub period: Option<usize>,
    pub split: Option<BlockSplit>,
}

impl GenerateRequest {
    pub fn to_config(&self) -> BlendConfig {
        let d = BlendConfig::default();
        BlendConfig {
            method: self.method,
            prompt_1: self.prompt_1.clone(),
            prompt_2: self.prompt_2.clone(),
            ratio: self.ratio.unwrap_or(d.ratio),
            seed: self.seed.unwrap_or(d.seed),
            steps: self.steps.unwrap_or(d.steps),
            guidance: self.guidance.unwrap_or(d.guidance),
            switch_step: self.switch_step,
            period: self.period,
            split: self.split,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub key: String,
    pub cached: bool,
    pub image_url: String,
    pub manifest: GenerationManifest,
}

async fn generate_blend(
    State(app): State<AppState>,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GenerateResponse>, ServiceError> {
    let config = req.to_config();
    config.validate()?;
    let key = config.content_key();
    let dir = app.study.config().data_dir.join("generated").join(&key);
    let image_url = format!("/generated/{key}/image.png");

    let _guard = app.generating.lock().await;
    if let Ok(manifest) = GenerationManifest::read(&dir.join("manifest.json")) {
        if dir.join("image.png").is_file() {
            return Ok(Json(GenerateResponse {
                key,
                cached: true,
                image_url,
                manifest,
            }));
        }
    }
    let mut backend = app.backend.clone();
    let manifest = tokio::task::spawn_blocking(move || -> Result<GenerationManifest, ServiceError> {
        let result = generate(&mut backend, &config)?;
        result.write_artifacts(&dir)?;
        Ok(result.manifest)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(GenerateResponse {
        key,
        cached: false,
        image_url,
        manifest,
    }))
}

async fn generated_image(
    State(app): State<AppState>,
    UrlPath(key): UrlPath<String>,
) -> Result<Response, ServiceError> {
    if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ServiceError::NotFound(format!("generation {key:?}")));
    }
    let path = app.study.config().data_dir.join("generated").join(&key).join("image.png");
    if !path.is_file() {
        return Err(ServiceError::NotFound(format!("generation {key}")));
    }
    png(&path).await
}
