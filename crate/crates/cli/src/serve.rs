//! Annotation service: image listing, image bytes, annotation read/write and
//! dataset statistics over JSON, plus the static UI bundle.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::services::ServeDir;

use iocount::dataset::{
    dataset_stats, encode_png, image_dimensions, parse_json, write_annotations, AnnotationDoc, DatasetLayout,
    DatasetStats,
};
use iocount::Error;

/// Port used when neither the flag nor the environment names one.
pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "IOC_PORT";

pub struct AppState {
    layout: DatasetLayout,
    ui_dir: Option<PathBuf>,
    write_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(layout: DatasetLayout, ui_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            layout,
            ui_dir,
            write_locks: Mutex::new(HashMap::new()),
        })
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.write_locks.lock().expect("lock map poisoned");
        map.entry(id.to_string()).or_default().clone()
    }

    /// Image filename whose stem is `id`.
    fn resolve(&self, id: &str) -> Result<String, ApiError> {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(ApiError::not_found(id));
        }
        self.layout
            .image_files()
            .map_err(ApiError::from)?
            .into_iter()
            .find(|f| iocount::dataset::stem(f) == id)
            .ok_or_else(|| ApiError::not_found(id))
    }
}

#[derive(Debug, Serialize)]
pub struct ImageEntry {
    pub id: String,
    pub filename: String,
    pub width: u32,
    pub height: u32,
    pub annotated_count: usize,
}

#[derive(Debug, Serialize)]
pub struct StatsResponse {
    pub images: usize,
    pub annotated_images: usize,
    /// Absent until at least one image is annotated.
    pub stats: Option<DatasetStats>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody {
                error: format!("no image with id {id:?}"),
                field: None,
            },
        }
    }

    fn invalid(field: &str, error: String) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error,
                field: Some(field.to_string()),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, field) = match &e {
            Error::Validation { field, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(field.clone())),
            Error::Parse { .. } => (StatusCode::BAD_REQUEST, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        Self {
            status,
            body: ErrorBody {
                error: e.to_string(),
                field,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}/file", get(image_file))
        .route("/api/annotations/{id}", get(get_annotation).put(put_annotation))
        .route("/api/stats", get(stats));
    let ui = state.ui_dir.clone();
    let api = api.with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>ioc</title><p>Annotation UI not built. The JSON API is under <code>/api</code>.</p>")
}

async fn list_images(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<ImageEntry>>> {
    let mut out = Vec::new();
    for filename in st.layout.image_files()? {
        let (width, height) = image_dimensions(&st.layout.image_path(&filename))?;
        let annotated_count = st.layout.annotation(&filename)?.map_or(0, |d| d.count());
        out.push(ImageEntry {
            id: iocount::dataset::stem(&filename).to_string(),
            filename,
            width,
            height,
            annotated_count,
        });
    }
    Ok(Json(out))
}

async fn image_file(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let file = st.resolve(&id)?;
    let png = encode_png(&st.layout.image_path(&file))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// The stored document, or an empty one sized to the image.
async fn get_annotation(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AnnotationDoc>> {
    let file = st.resolve(&id)?;
    if let Some(doc) = st.layout.annotation(&file)? {
        return Ok(Json(doc));
    }
    let (w, h) = image_dimensions(&st.layout.image_path(&file))?;
    Ok(Json(AnnotationDoc::new(file, w, h)))
}

async fn put_annotation(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<AnnotationDoc>> {
    let file = st.resolve(&id)?;
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::from(Error::Parse {
        context: "request body".into(),
        message: e.to_string(),
    }))?;
    let doc: AnnotationDoc = parse_json(text, "request body")?;
    if doc.image != file {
        return Err(ApiError::invalid("image", format!("document names {:?} but the resource is {file:?}", doc.image)));
    }
    let (w, h) = image_dimensions(&st.layout.image_path(&file))?;
    if doc.width != w {
        return Err(ApiError::invalid("width", format!("{} differs from the image width {w}", doc.width)));
    }
    if doc.height != h {
        return Err(ApiError::invalid("height", format!("{} differs from the image height {h}", doc.height)));
    }
    doc.validate()?;
    let lock = st.lock_for(&id);
    let _guard = lock.lock().await;
    write_annotations(&doc, &st.layout.annotation_path(&file))?;
    Ok(Json(doc))
}

async fn stats(State(st): State<Arc<AppState>>) -> ApiResult<Json<StatsResponse>> {
    let files = st.layout.image_files()?;
    let mut docs = Vec::new();
    for f in &files {
        docs.extend(st.layout.annotation(f)?);
    }
    let stats = if docs.is_empty() { None } else { Some(dataset_stats(&docs)?) };
    Ok(Json(StatsResponse {
        images: files.len(),
        annotated_images: docs.len(),
        stats,
    }))
}

/// Flag, then environment, then [`DEFAULT_PORT`].
pub fn resolve_port(flag: Option<u16>, env: Option<&str>) -> anyhow::Result<u16> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match env {
        Some(v) => v
            .parse()
            .map_err(|_| anyhow::anyhow!("{PORT_ENV}={v:?} is not a port number")),
        None => Ok(DEFAULT_PORT),
    }
}

pub async fn run(state: Arc<AppState>, port: u16) -> anyhow::Result<()> {
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot listen on {addr}: {e}"))?;
    println!("serving on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
