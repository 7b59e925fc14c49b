//! HTTP facade over annotation sessions.
//!
//! Each session owns a [`Project`] plus a revision counter. Mutating calls
//! take the session's write lock, so they run one at a time in arrival
//! order; reads share the lock. Edits carry the revision the client last
//! saw and are rejected with 409 when it is stale.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::RwLock;

use crate::detect::{run_detection, DetectConfig, DetectorBackend};
use crate::lexicon::Dictionary;
use crate::order::{OrderConfig, OrderError};
use crate::preproc::{resize_page, GrayImage};
use crate::project::{Edit, EditOutcome, PageInfo, Project, ProjectError, RecognizeOptions};
use crate::recognizer::{CharSet, Decoder, ModelParams};

/// Recognition model shared by all sessions.
pub struct LoadedModel {
    pub params: ModelParams<f32>,
    pub charset: CharSet,
}

pub struct ServiceConfig {
    pub backend: Option<Arc<dyn DetectorBackend>>,
    pub model: Option<Arc<LoadedModel>>,
    pub dictionary: Option<Arc<Dictionary>>,
    pub decoder: Decoder,
    pub detect: DetectConfig,
    pub order: OrderConfig,
    /// Finalized sessions export into `output_dir/<session id>/`.
    pub output_dir: PathBuf,
}

impl ServiceConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            backend: None,
            model: None,
            dictionary: None,
            decoder: Decoder::Beam(25),
            detect: DetectConfig::default(),
            order: OrderConfig::default(),
            output_dir: output_dir.into(),
        }
    }
}

struct Session {
    project: Project,
    revision: u64,
    original: GrayImage,
    resized_png: Vec<u8>,
}

struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<RwLock<Session>>>>,
    next_id: AtomicU64,
}

pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        config,
        sessions: RwLock::new(HashMap::new()),
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/edits", post(apply_edit))
        .route("/sessions/{id}/serialize", post(serialize))
        .route("/sessions/{id}/recognize", post(recognize))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/image", get(image))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "details": self.details});
        (self.status, Json(body)).into_response()
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        let msg = e.to_string();
        match e {
            ProjectError::PhaseOrder { status, .. } => {
                ApiError::new(StatusCode::CONFLICT, "phase_order", msg).details(json!({"status": status.as_str()}))
            }
            ProjectError::MissingText(ids) => ApiError::new(StatusCode::CONFLICT, "missing_text", msg)
                .details(json!({"ids": ids.iter().map(|i| i.0).collect::<Vec<_>>()})),
            ProjectError::Order(OrderError::UnknownId(id)) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_box", msg).details(json!({"id": id.0}))
            }
            ProjectError::Order(OrderError::ZeroArea) => ApiError::new(StatusCode::BAD_REQUEST, "zero_area", msg),
            ProjectError::Io { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io_failure", msg),
            ProjectError::Recognizer(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "recognizer_failure", msg),
            _ => ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", msg),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn session(state: &AppState, id: &str) -> ApiResult<Arc<RwLock<Session>>> {
    state
        .sessions
        .read()
        .await
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))
}

fn boxes_json(project: &Project) -> Value {
    project.to_json()["boxes"].clone()
}

async fn create_session(State(state): State<Arc<AppState>>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut upload: Option<(String, Vec<u8>)> = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?
    {
        let name = field.file_name().unwrap_or("page").to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
        if upload.is_none() {
            upload = Some((name, bytes.to_vec()));
        }
    }
    let (source, bytes) =
        upload.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", "no image in upload"))?;
    let original =
        GrayImage::decode(&bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string()))?;
    let resized = resize_page(&original);
    let info = PageInfo {
        source,
        width: original.width(),
        height: original.height(),
        scale: resized.scale,
    };
    let project = match &state.config.backend {
        Some(backend) => match run_detection(&resized, backend.as_ref(), &state.config.detect) {
            Ok(boxes) => Project::from_detections(info, &boxes),
            Err(e) => {
                log::warn!("detection failed, starting with no boxes: {e}");
                Project::new(info)
            }
        },
        None => Project::new(info),
    };
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::SeqCst));
    let body = json!({"id": id, "boxes": boxes_json(&project), "revision": 0, "status": project.status().as_str()});
    let session = Session {
        project,
        revision: 0,
        original,
        resized_png: resized.image.encode_png(),
    };
    state.sessions.write().await.insert(id, Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&state, &id).await?;
    let s = s.read().await;
    Ok(Json(json!({
        "id": id,
        "revision": s.revision,
        "project": s.project.to_json(),
        "lines": s.project.lines(&state.config.order).iter().map(|l| l.iter().map(|b| b.0).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })))
}

#[derive(Deserialize)]
struct EditRequest {
    revision: u64,
    edit: Edit,
}

async fn apply_edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<EditRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let s = session(&state, &id).await?;
    let mut s = s.write().await;
    if req.revision != s.revision {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "stale_revision",
            format!("edit based on revision {} but the session is at {}", req.revision, s.revision),
        )
        .details(json!({"revision": s.revision})));
    }
    let outcome = s.project.apply_edit(&req.edit)?;
    s.revision += 1;
    let mut body = json!({"revision": s.revision});
    if let EditOutcome::Added(b) | EditOutcome::Updated(b) = outcome {
        body["box"] = json!({"id": b.id.0, "x": b.rect.x, "y": b.rect.y, "w": b.rect.w, "h": b.rect.h});
    }
    Ok(Json(body))
}

async fn serialize(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&state, &id).await?;
    let mut s = s.write().await;
    let lines = s.project.serialize(&state.config.order)?;
    s.revision += 1;
    Ok(Json(json!({
        "order": s.project.layout().sequence().iter().map(|b| b.0).collect::<Vec<_>>(),
        "lines": lines.iter().map(|l| l.iter().map(|b| b.0).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "revision": s.revision,
    })))
}

async fn recognize(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let model = state
        .config
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "model_unavailable", "no recognition model is configured"))?;
    let s = session(&state, &id).await?;
    let mut guard = s.write_owned().await;
    let state2 = state.clone();
    let (results, revision) = tokio::task::spawn_blocking(move || {
        let s = &mut *guard;
        let opts = RecognizeOptions {
            decoder: state2.config.decoder,
            dictionary: state2.config.dictionary.as_deref(),
        };
        let results = s.project.recognize(&s.original, &model.params, &model.charset, opts)?;
        s.revision += 1;
        Ok::<_, ProjectError>((results, s.revision))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let mut texts = serde_json::Map::new();
    let mut scores = serde_json::Map::new();
    for r in &results {
        texts.insert(r.id.to_string(), json!(r.text));
        scores.insert(r.id.to_string(), json!(r.log_prob));
    }
    Ok(Json(json!({"texts": texts, "scores": scores, "revision": revision})))
}

async fn finalize(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&state, &id).await?;
    let mut guard = s.write_owned().await;
    let state2 = state.clone();
    let out_dir = state.config.output_dir.join(&id);
    let (done, revision) = tokio::task::spawn_blocking(move || {
        let s = &mut *guard;
        let done = s.project.finalize(&s.original, &out_dir, &state2.config.order)?;
        s.project.save(&out_dir.join("project.json"))?;
        s.revision += 1;
        Ok::<_, ProjectError>((done, s.revision))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({
        "transcript_path": done.transcript_path.display().to_string(),
        "dataset_dir": done.dataset_dir.display().to_string(),
        "revision": revision,
    })))
}

async fn image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = session(&state, &id).await?;
    let png = s.read().await.resized_png.clone();
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
