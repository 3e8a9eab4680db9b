//! JSON-over-HTTP front end for the control UI.
//!
//! Routes:
//! - `GET /api/health`
//! - `GET /api/exemplars`: id, name, tags and a base64 PNG thumbnail per exemplar
//! - `POST /api/synthesize`: `{"request": {...}, "input": <base64 PNG>, "ground_truth"?: <base64 PNG>, "async"?: bool}`
//! - `GET /api/result/{job}`: manifest, candidate PNGs and exemplar-id maps, all base64
//!
//! Errors are `{"error": "..."}` with status 400 (bad request) or 404 (unknown job).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use pixelnn::image::encode_png;
use pixelnn::pipeline::{self, Selection, SynthesisOutcome, SynthesisRequest};
use pixelnn::{decode_png, ExemplarDatabase, ImageRGB};
use serde::Deserialize;
use serde_json::{json, Value};

const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl ToString) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.to_string(),
        }
    }

    fn internal(message: impl ToString) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

enum Job {
    Running,
    Done(Arc<Value>),
    Failed(String),
}

pub struct AppState {
    db: ExemplarDatabase,
    jobs: Mutex<HashMap<u64, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(db: ExemplarDatabase) -> Arc<Self> {
        Arc::new(Self {
            db,
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    fn set(&self, id: u64, job: Job) {
        self.jobs
            .lock()
            .expect("job store poisoned")
            .insert(id, job);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/exemplars", get(exemplars))
        .route("/api/synthesize", post(synthesize))
        .route("/api/result/{job}", get(result))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let (w, h) = state.db.image_size();
    Json(json!({ "status": "ok", "exemplars": state.db.len(), "width": w, "height": h }))
}

async fn exemplars(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let list = state
        .db
        .iter()
        .map(|e| {
            let png = encode_png(&e.target).map_err(ApiError::internal)?;
            Ok(json!({
                "id": e.id,
                "name": e.name,
                "tags": e.tags,
                "thumbnail": STANDARD.encode(png),
            }))
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    Ok(Json(Value::Array(list)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthesizeBody {
    #[serde(default)]
    request: SynthesisRequest,
    input: String,
    #[serde(default)]
    ground_truth: Option<String>,
    #[serde(default, rename = "async")]
    run_async: bool,
}

fn decode_image(b64: &str, what: &str) -> Result<ImageRGB, ApiError> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::bad_request(format!("{what}: invalid base64: {e}")))?;
    decode_png(&bytes).map_err(|e| ApiError::bad_request(format!("{what}: {e}")))
}

/// JSON form of a finished job: manifest plus inlined images.
pub fn render_result(outcome: &SynthesisOutcome) -> pixelnn::Result<Value> {
    let candidates = outcome
        .selected_candidates()
        .map(|c| {
            Ok(json!({
                "k": c.config.k_global,
                "t": c.config.window,
                "name": pipeline::candidate_stem(c),
                "image": STANDARD.encode(encode_png(&c.image)?),
                "id_map": STANDARD.encode(c.correspondence.id_map_png()?),
                "exemplars_used": c.correspondence.exemplar_ids(),
                "clamped_pixel_count": c.clamped_pixel_count,
            }))
        })
        .collect::<pixelnn::Result<Vec<_>>>()?;
    Ok(json!({ "manifest": outcome.manifest(), "candidates": candidates }))
}

async fn synthesize(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let body: SynthesizeBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))?;
    let request = body.request;
    request.validate().map_err(ApiError::bad_request)?;
    request.resolve(&state.db).map_err(ApiError::bad_request)?;
    let input = decode_image(&body.input, "input")?;
    let gt = body
        .ground_truth
        .as_deref()
        .map(|g| decode_image(g, "ground_truth"))
        .transpose()?;
    if request.select == Selection::Oracle && gt.is_none() {
        return Err(ApiError::bad_request(pixelnn::Error::MissingGroundTruth));
    }

    let id = state.next_job.fetch_add(1, Ordering::Relaxed);
    state.set(id, Job::Running);
    let worker = Arc::clone(&state);
    let task = tokio::task::spawn_blocking(move || {
        let job = match pipeline::run(&worker.db, &request, &input, None, gt.as_ref())
            .and_then(|o| render_result(&o))
        {
            Ok(v) => Job::Done(Arc::new(v)),
            Err(e) => Job::Failed(e.to_string()),
        };
        let failure = match &job {
            Job::Failed(msg) => Some(msg.clone()),
            _ => None,
        };
        worker.set(id, job);
        failure
    });
    if body.run_async {
        return Ok(Json(json!({ "job": id.to_string(), "status": "running" })));
    }
    match task.await.map_err(ApiError::internal)? {
        Some(msg) => Err(ApiError::bad_request(msg)),
        None => Ok(Json(json!({ "job": id.to_string(), "status": "done" }))),
    }
}

async fn result(
    State(state): State<Arc<AppState>>,
    Path(job): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let not_found = || ApiError {
        status: StatusCode::NOT_FOUND,
        message: format!("unknown job {job}"),
    };
    let id: u64 = job.parse().map_err(|_| not_found())?;
    let snapshot = {
        let jobs = state.jobs.lock().expect("job store poisoned");
        match jobs.get(&id).ok_or_else(not_found)? {
            Job::Running => Err(json!({ "job": job, "status": "running" })),
            Job::Failed(msg) => Err(json!({ "job": job, "status": "failed", "error": msg })),
            Job::Done(v) => Ok(Arc::clone(v)),
        }
    };
    let value = match snapshot {
        Err(pending) => pending,
        Ok(done) => {
            let mut out = (*done).clone();
            out["job"] = json!(job);
            out["status"] = json!("done");
            out
        }
    };
    Ok(Json(value))
}

pub async fn serve(db: ExemplarDatabase, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(db))).await?;
    Ok(())
}
