//! HTTP service backing the interactive workbench.
//!
//! The checkpoint is loaded once and shared read-only. Each SLI run is a
//! session executing on the blocking pool; frames are appended to the
//! session as they are produced and can be fetched incrementally, with
//! optional long-polling.

use std::collections::HashMap;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sketchxai_core::dataset::Sample;
use sketchxai_core::sli::{run_sli_with, Frame, TrajectoryHeader};
use sketchxai_core::{synth, Checkpoint, Error, Point, SliConfig, TaskKind};
use tokio::sync::Notify;

use crate::wire::{ClassRef, ErrorBody, ErrorEnvelope, WireSketch};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(15 * 60);
const MAX_SAMPLES: usize = 100;
const MAX_WAIT_MS: u64 = 30_000;

/// API error: status plus machine-readable body.
#[derive(Debug)]
pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        ApiError(
            StatusCode::NOT_FOUND,
            ErrorBody {
                kind: "not_found".into(),
                message: what.into(),
                path: None,
            },
        )
    }

    fn bad_request(path: &str, message: impl Into<String>) -> Self {
        ApiError(
            StatusCode::BAD_REQUEST,
            ErrorBody {
                kind: "invalid".into(),
                message: message.into(),
                path: Some(path.to_owned()),
            },
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let body = ErrorBody::from_core(&e);
        let status = match body.kind.as_str() {
            "not_found" => StatusCode::NOT_FOUND,
            "invalid" | "config_mismatch" | "insufficient_data" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, body)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request("body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request("query", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorEnvelope { error: &self.1 })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

struct SessionData {
    status: RunStatus,
    header: Option<TrajectoryHeader>,
    frames: Vec<Frame>,
    error: Option<String>,
    last_access: Instant,
}

/// One SLI run. Frames are append-only.
pub struct Session {
    pub id: String,
    pub config: SliConfig,
    pub checkpoint_id: String,
    cancel: AtomicBool,
    notify: Notify,
    data: Mutex<SessionData>,
}

impl Session {
    fn touch(&self) {
        self.data.lock().unwrap().last_access = Instant::now();
    }
}

/// Where `/samples` draws its sketches from.
pub enum SampleSource {
    /// Preloaded, normalized sketches per category index.
    Dataset(Vec<Vec<Sample>>),
    /// Generated on demand for categories the generator knows.
    Synthetic,
}

pub struct AppState {
    pub model: Arc<Checkpoint>,
    pub checkpoint_id: String,
    pub samples: SampleSource,
    pub idle_timeout: Duration,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(model: Checkpoint, checkpoint_id: String, samples: SampleSource) -> Arc<Self> {
        Arc::new(AppState {
            model: Arc::new(model),
            checkpoint_id,
            samples,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_idle_timeout(mut self: Arc<Self>, t: Duration) -> Arc<Self> {
        Arc::get_mut(&mut self).expect("configure before sharing").idle_timeout = t;
        self
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown run id `{id}`")))
    }

    /// Cancels and drops sessions idle for longer than the timeout;
    /// returns how many were removed.
    pub fn expire_idle(&self) -> usize {
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, s| {
            let idle = s.data.lock().unwrap().last_access.elapsed() > self.idle_timeout;
            if idle {
                s.cancel.store(true, Ordering::Relaxed);
            }
            !idle
        });
        before - sessions.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/categories", get(categories))
        .route("/samples", get(samples))
        .route("/classify", post(classify))
        .route("/whatif", post(whatif))
        .route("/sli", post(start_sli))
        .route("/sli/{id}/frames", get(frames))
        .route("/sli/{id}", axum::routing::delete(cancel))
        .with_state(state)
}

/// Periodically expires idle sessions until the state is dropped.
pub fn spawn_reaper(state: &Arc<AppState>) {
    let weak = Arc::downgrade(state);
    let period = (state.idle_timeout / 4).clamp(Duration::from_millis(50), Duration::from_secs(60));
    tokio::spawn(async move {
        loop {
            tokio::time::sleep(period).await;
            match weak.upgrade() {
                Some(s) => {
                    let n = s.expire_idle();
                    if n > 0 {
                        log::info!("expired {n} idle session(s)");
                    }
                }
                None => break,
            }
        }
    });
}

#[derive(Serialize, Deserialize)]
pub struct CategoriesResponse {
    pub categories: Vec<String>,
    pub checkpoint_id: String,
}

async fn categories(State(st): State<Arc<AppState>>) -> Json<CategoriesResponse> {
    Json(CategoriesResponse {
        categories: st.model.categories.clone(),
        checkpoint_id: st.checkpoint_id.clone(),
    })
}

#[derive(Deserialize)]
pub struct SamplesQuery {
    pub category: String,
    #[serde(default = "default_n")]
    pub n: usize,
}

fn default_n() -> usize {
    8
}

#[derive(Serialize, Deserialize)]
pub struct SampleItem {
    pub id: usize,
    pub sketch: WireSketch,
}

#[derive(Serialize, Deserialize)]
pub struct SamplesResponse {
    pub category: String,
    pub samples: Vec<SampleItem>,
}

async fn samples(
    State(st): State<Arc<AppState>>,
    q: Result<Query<SamplesQuery>, QueryRejection>,
) -> ApiResult<SamplesResponse> {
    let Query(q) = q?;
    let label = ClassRef::Name(q.category.clone()).resolve(&st.model.categories, "category")?;
    let n = q.n.min(MAX_SAMPLES);
    let items = match &st.samples {
        SampleSource::Dataset(per_class) => per_class
            .get(label)
            .map(|v| v.iter().take(n).cloned().collect::<Vec<_>>())
            .unwrap_or_default(),
        SampleSource::Synthetic => synthetic_samples(&q.category, label, n)?,
    };
    Ok(Json(SamplesResponse {
        category: q.category,
        samples: items
            .iter()
            .map(|s| SampleItem {
                id: s.id,
                sketch: WireSketch::from_sketch(&s.sketch),
            })
            .collect(),
    }))
}

fn synthetic_samples(category: &str, label: usize, n: usize) -> Result<Vec<Sample>, Error> {
    if !synth::SYNTH_CATEGORIES.contains(&category) {
        return Ok(Vec::new());
    }
    (0..n)
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(i as u64);
            let raw = synth::generate(category, &mut rng)?;
            let sketch = sketchxai_core::rdp::simplify_sketch(
                &sketchxai_core::sketch::normalize(&raw)?,
                sketchxai_core::rdp::DEFAULT_EPSILON,
            )?;
            Ok(Sample {
                id: i,
                sketch: sketchxai_core::Sketch::new(sketch.strokes, Some(label)),
            })
        })
        .collect()
}

#[derive(Deserialize)]
pub struct ClassifyRequest {
    pub sketch: WireSketch,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub category: String,
}

fn scores_response(model: &Checkpoint, sketch: &sketchxai_core::Sketch) -> Result<ClassifyResponse, ApiError> {
    if sketch.strokes.iter().all(|s| s.is_empty()) {
        return Err(ApiError::bad_request("sketch.strokes", "sketch has no points"));
    }
    let s = model.classify_sketch(sketch)?;
    let predicted = s.predicted();
    Ok(ClassifyResponse {
        category: model.categories[predicted].clone(),
        predicted,
        probabilities: s.probabilities,
        logits: s.logits,
    })
}

async fn classify(
    State(st): State<Arc<AppState>>,
    body: Result<Json<ClassifyRequest>, JsonRejection>,
) -> ApiResult<ClassifyResponse> {
    let Json(req) = body?;
    let sketch = req.sketch.to_sketch(&st.model.categories, "sketch")?;
    Ok(Json(scores_response(&st.model, &sketch)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Move {
    pub stroke: usize,
    /// New location (first point) of the stroke.
    pub to: Point,
}

#[derive(Deserialize)]
pub struct WhatIfRequest {
    pub sketch: WireSketch,
    #[serde(default)]
    pub moves: Vec<Move>,
}

async fn whatif(
    State(st): State<Arc<AppState>>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> ApiResult<ClassifyResponse> {
    let Json(req) = body?;
    let mut sketch = req.sketch.to_sketch(&st.model.categories, "sketch")?;
    for (i, m) in req.moves.iter().enumerate() {
        let stroke = sketch
            .strokes
            .get_mut(m.stroke)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| ApiError::bad_request(&format!("moves[{i}].stroke"), "no such stroke"))?;
        if !m.to.is_finite() {
            return Err(ApiError::bad_request(&format!("moves[{i}].to"), "non-finite location"));
        }
        let first = stroke.first().expect("non-empty");
        *stroke = stroke.translate(m.to.sub(first));
    }
    Ok(Json(scores_response(&st.model, &sketch)?))
}

#[derive(Deserialize)]
pub struct SliRequest {
    pub sketch: WireSketch,
    #[serde(default)]
    pub config: SliConfig,
    /// Overrides `config.target`, by index or name.
    #[serde(default)]
    pub target: Option<ClassRef>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SliStarted {
    pub run_id: String,
    pub status: RunStatus,
}

async fn start_sli(
    State(st): State<Arc<AppState>>,
    body: Result<Json<SliRequest>, JsonRejection>,
) -> ApiResult<SliStarted> {
    let Json(req) = body?;
    let sketch = req.sketch.to_sketch(&st.model.categories, "sketch")?;
    let mut config = req.config;
    if let Some(t) = &req.target {
        config.target = Some(t.resolve(&st.model.categories, "target")?);
    }
    config.validate()?;
    if config.task != TaskKind::Recovery && config.target.is_none() {
        return Err(ApiError::bad_request("target", "transfer needs a target class"));
    }
    if sketch.strokes.iter().all(|s| s.is_empty()) {
        return Err(ApiError::bad_request("sketch.strokes", "sketch has no points"));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Arc::new(Session {
        id: id.clone(),
        config: config.clone(),
        checkpoint_id: st.checkpoint_id.clone(),
        cancel: AtomicBool::new(false),
        notify: Notify::new(),
        data: Mutex::new(SessionData {
            status: RunStatus::Pending,
            header: None,
            frames: Vec::new(),
            error: None,
            last_access: Instant::now(),
        }),
    });
    st.sessions.lock().unwrap().insert(id.clone(), session.clone());
    let model = st.model.clone();
    tokio::task::spawn_blocking(move || run_session(&model, &sketch, &session));
    Ok(Json(SliStarted {
        run_id: id,
        status: RunStatus::Pending,
    }))
}

fn run_session(model: &Checkpoint, sketch: &sketchxai_core::Sketch, session: &Session) {
    session.data.lock().unwrap().status = RunStatus::Running;
    session.notify.notify_waiters();
    let result = run_sli_with(model, sketch, &session.config, |frame| {
        if session.cancel.load(Ordering::Relaxed) {
            return ControlFlow::Break(());
        }
        session.data.lock().unwrap().frames.push(frame.clone());
        session.notify.notify_waiters();
        ControlFlow::Continue(())
    });
    {
        let mut d = session.data.lock().unwrap();
        match result {
            Ok(traj) => {
                d.header = Some(traj.header);
                d.status = RunStatus::Done;
            }
            Err(e) => {
                d.error = Some(e.to_string());
                d.status = RunStatus::Failed;
            }
        }
    }
    session.notify.notify_waiters();
}

#[derive(Deserialize)]
pub struct FramesQuery {
    #[serde(default)]
    pub from: usize,
    /// Long-poll: wait up to this long for frames past `from`.
    #[serde(default)]
    pub wait_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FramesResponse {
    pub run_id: String,
    pub status: RunStatus,
    pub from: usize,
    pub frames: Vec<Frame>,
    /// Value of `from` for the next request.
    pub next: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<TrajectoryHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

async fn frames(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: Result<Query<FramesQuery>, QueryRejection>,
) -> ApiResult<FramesResponse> {
    let Query(q) = q?;
    let session = st.session(&id)?;
    session.touch();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms.min(MAX_WAIT_MS));
    loop {
        let notified = session.notify.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();
        {
            let d = session.data.lock().unwrap();
            let finished = matches!(d.status, RunStatus::Done | RunStatus::Failed);
            if d.frames.len() > q.from || finished || tokio::time::Instant::now() >= deadline {
                let frames: Vec<Frame> = d.frames.iter().skip(q.from).cloned().collect();
                return Ok(Json(FramesResponse {
                    run_id: id,
                    status: d.status,
                    from: q.from,
                    next: q.from + frames.len(),
                    frames,
                    header: if finished { d.header.clone() } else { None },
                    error: d.error.clone(),
                }));
            }
        }
        let _ = tokio::time::timeout_at(deadline, notified).await;
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Cancelled {
    pub run_id: String,
    pub cancelled: bool,
}

async fn cancel(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Cancelled> {
    let session = st
        .sessions
        .lock()
        .unwrap()
        .remove(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run id `{id}`")))?;
    session.cancel.store(true, Ordering::Relaxed);
    Ok(Json(Cancelled {
        run_id: id,
        cancelled: true,
    }))
}
