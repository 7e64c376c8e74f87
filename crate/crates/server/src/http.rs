//! HTTP adapter over the workflow module. Scenes are served under opaque
//! per-session handles, so nothing in a response tells a golden scene apart.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cloudseed::geometry::Box3D;
use cloudseed::pointcloud::{decode_cloud, load_scene, Category, GroundTruthObject, Point3};
use cloudseed::seed::{derive_seed, hash_label};
use cloudseed::segmentation::Click;
use cloudseed::workflow::{
    advance_training, assemble_batch, process_batch, retake_training, score_scene, training_sequence, AnnotatorSession, Batch, BatchOutcome,
    ClickDb, QAConfig, SceneResult, SceneSubmission, SessionState,
};
use serde::{Deserialize, Serialize};

use crate::commands::scene_ids;

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    NotFound(String),
    Conflict(String),
    BadRequest(String),
    Unavailable(String),
    Internal(String),
}

impl From<cloudseed::Error> for ApiError {
    fn from(e: cloudseed::Error) -> Self {
        use cloudseed::Error as E;
        match e {
            E::State(m) | E::IncompleteBatch(m) => ApiError::Conflict(m),
            E::PoolExhausted(m) => ApiError::Unavailable(m),
            E::Parameter(m) => ApiError::BadRequest(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        ApiError::Internal(format!("{e:#}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "missing or unknown session token".to_string()),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Scene directories and bookkeeping for a running service.
pub struct ServeSetup {
    pub qa: QAConfig,
    pub seed: u64,
    pub training_dir: PathBuf,
    pub golden_dir: PathBuf,
    pub pool_dir: PathBuf,
    pub click_db: PathBuf,
    pub sessions_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Training,
    Pool,
    Golden,
}

#[derive(Clone, Debug)]
struct Served {
    handle: String,
    source: Source,
    scene_id: String,
    position: usize,
    total: usize,
}

struct ActiveBatch {
    batch: Batch,
    submissions: BTreeMap<String, SceneSubmission<f64>>,
}

struct Entry {
    session: AnnotatorSession<f64>,
    snapshot_name: String,
    current: Option<Served>,
    batch: Option<ActiveBatch>,
    batches_started: u64,
    handles_issued: u64,
    last_review: Option<(String, SceneResult<f64>, Vec<GroundTruthObject<f64>>)>,
}

pub struct Shared {
    qa: QAConfig,
    seed: u64,
    training_dir: PathBuf,
    golden_dir: PathBuf,
    pool_dir: PathBuf,
    training_ids: Vec<String>,
    golden_ids: Vec<String>,
    queue: Mutex<VecDeque<String>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Entry>>>>,
    created: AtomicU64,
    db: ClickDb,
    sessions_dir: Option<PathBuf>,
}

pub type AppState = Arc<Shared>;

impl Shared {
    pub fn new(setup: ServeSetup) -> anyhow::Result<Self> {
        setup.qa.validate()?;
        let training_ids = scene_ids(&setup.training_dir)?;
        let golden_ids = scene_ids(&setup.golden_dir)?;
        let pool_ids = scene_ids(&setup.pool_dir)?;
        if training_ids.len() < setup.qa.training_scenes {
            anyhow::bail!("training pool holds {} scenes, a sequence needs {}", training_ids.len(), setup.qa.training_scenes);
        }
        if golden_ids.is_empty() {
            anyhow::bail!("golden pool is empty");
        }
        if let Some(dir) = &setup.sessions_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            qa: setup.qa,
            seed: setup.seed,
            training_dir: setup.training_dir,
            golden_dir: setup.golden_dir,
            pool_dir: setup.pool_dir,
            training_ids,
            golden_ids,
            queue: Mutex::new(pool_ids.into()),
            sessions: Mutex::new(HashMap::new()),
            created: AtomicU64::new(0),
            db: ClickDb::open(setup.click_db)?,
            sessions_dir: setup.sessions_dir,
        })
    }

    fn dir(&self, source: Source) -> &Path {
        match source {
            Source::Training => &self.training_dir,
            Source::Pool => &self.pool_dir,
            Source::Golden => &self.golden_dir,
        }
    }

    fn entry(&self, headers: &HeaderMap) -> ApiResult<Arc<tokio::sync::Mutex<Entry>>> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ApiError::Unauthorized)?;
        self.sessions.lock().expect("session table").get(token).cloned().ok_or(ApiError::Unauthorized)
    }

    fn persist(&self, entry: &Entry) -> ApiResult<()> {
        if let Some(dir) = &self.sessions_dir {
            entry.session.save(dir.join(&entry.snapshot_name))?;
        }
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/state", get(session_state))
        .route("/scene/next", get(next_scene))
        .route("/scene/{id}/cloud", get(scene_cloud))
        .route("/scene/{id}/clicks", post(submit_clicks))
        .route("/review", get(review))
        .with_state(state)
}

pub async fn serve(setup: ServeSetup, addr: &str) -> anyhow::Result<()> {
    let state = Arc::new(Shared::new(setup)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub annotator_id: String,
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub annotator_id: String,
    pub category: Category,
    /// `in_training`, `annotating` or `failed_requalify`.
    pub state: String,
    pub training_sequence: u32,
    pub training_scene: Option<usize>,
    pub batches_committed: u32,
    pub batches_discarded: u32,
}

fn view(s: &AnnotatorSession<f64>) -> SessionView {
    let (state, training_scene, committed) = match &s.state {
        SessionState::InTraining { scene_index, .. } => ("in_training", Some(*scene_index), 0),
        SessionState::Annotating { batches_committed } => ("annotating", None, *batches_committed),
        SessionState::FailedRequalify => ("failed_requalify", None, 0),
    };
    SessionView {
        annotator_id: s.annotator_id.clone(),
        category: s.category,
        state: state.into(),
        training_sequence: s.training_sequences(),
        training_scene,
        batches_committed: committed,
        batches_discarded: s.batches_discarded,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub token: String,
    pub session: SessionView,
}

async fn create_session(State(app): State<AppState>, Json(req): Json<CreateSession>) -> ApiResult<Json<Created>> {
    if req.annotator_id.trim().is_empty() {
        return Err(ApiError::BadRequest("annotator_id is required".into()));
    }
    let n = app.created.fetch_add(1, Ordering::SeqCst);
    let session = AnnotatorSession::new(
        &req.annotator_id,
        req.category.unwrap_or(Category::Car),
        derive_seed(app.seed, &[hash_label("session"), n]),
    );
    let safe: String = req
        .annotator_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let entry = Entry {
        snapshot_name: format!("{safe}-{n:04}.json"),
        session,
        current: None,
        batch: None,
        batches_started: 0,
        handles_issued: 0,
        last_review: None,
    };
    app.persist(&entry)?;
    let token = format!("{:032x}", rand::random::<u128>());
    let out = Created {
        token: token.clone(),
        session: view(&entry.session),
    };
    app.sessions
        .lock()
        .expect("session table")
        .insert(token, Arc::new(tokio::sync::Mutex::new(entry)));
    Ok(Json(out))
}

async fn session_state(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<Json<SessionView>> {
    let entry = app.entry(&headers)?;
    let e = entry.lock().await;
    Ok(Json(view(&e.session)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub scene_id: String,
    pub point_count: usize,
    pub category: Category,
    /// `training` or `annotating`.
    pub phase: String,
    pub position: usize,
    pub total: usize,
    /// Where the binary cloud is fetched from.
    pub payload: String,
}

fn next_handle(e: &mut Entry) -> String {
    e.handles_issued += 1;
    format!("{:016x}", derive_seed(e.session.seed, &[hash_label("handle"), e.handles_issued]))
}

fn pick_next(app: &Shared, e: &mut Entry) -> ApiResult<Served> {
    if e.session.state == SessionState::FailedRequalify {
        retake_training(&mut e.session)?;
        e.batch = None;
    }
    match e.session.state.clone() {
        SessionState::InTraining { sequence, scene_index, .. } => {
            let ids = training_sequence(&app.training_ids, &app.qa, e.session.seed, sequence)?;
            Ok(Served {
                handle: next_handle(e),
                source: Source::Training,
                scene_id: ids[scene_index].clone(),
                position: scene_index,
                total: ids.len(),
            })
        }
        SessionState::Annotating { .. } => {
            if e.batch.is_none() {
                let taken: Vec<String> = {
                    let mut q = app.queue.lock().expect("scene queue");
                    if q.len() < app.qa.batch_size {
                        return Err(ApiError::Unavailable("scene pool exhausted".into()));
                    }
                    q.drain(..app.qa.batch_size).collect()
                };
                e.batches_started += 1;
                let seed = derive_seed(e.session.seed, &[hash_label("batch"), e.batches_started]);
                match assemble_batch(&taken, &app.golden_ids, e.session.category, &app.qa, seed) {
                    Ok(batch) => {
                        e.batch = Some(ActiveBatch {
                            batch,
                            submissions: BTreeMap::new(),
                        })
                    }
                    Err(err) => {
                        let mut q = app.queue.lock().expect("scene queue");
                        for id in taken.into_iter().rev() {
                            q.push_front(id);
                        }
                        return Err(err.into());
                    }
                }
            }
            let active = e.batch.as_ref().expect("batch just assembled");
            let (position, id) = active
                .batch
                .scene_ids
                .iter()
                .enumerate()
                .find(|(_, id)| !active.submissions.contains_key(*id))
                .ok_or_else(|| ApiError::Internal("batch has no open scene".into()))?;
            let source = if position == active.batch.golden_position { Source::Golden } else { Source::Pool };
            let (scene_id, total) = (id.clone(), active.batch.scene_ids.len());
            Ok(Served {
                handle: next_handle(e),
                source,
                scene_id,
                position,
                total,
            })
        }
        SessionState::FailedRequalify => unreachable!("left above"),
    }
}

async fn next_scene(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<Json<SceneDescriptor>> {
    let entry = app.entry(&headers)?;
    let mut e = entry.lock().await;
    let served = match e.current.clone() {
        Some(s) => s,
        None => {
            let s = pick_next(&app, &mut e)?;
            e.current = Some(s.clone());
            app.persist(&e)?;
            s
        }
    };
    let raw = std::fs::read(app.dir(served.source).join(format!("{}.cspc", served.scene_id))).map_err(|err| ApiError::Internal(err.to_string()))?;
    let cloud = decode_cloud::<f64>(&raw)?;
    Ok(Json(SceneDescriptor {
        point_count: cloud.len(),
        category: e.session.category,
        phase: if served.source == Source::Training { "training" } else { "annotating" }.into(),
        position: served.position,
        total: served.total,
        payload: format!("/scene/{}/cloud", served.handle),
        scene_id: served.handle,
    }))
}

async fn scene_cloud(State(app): State<AppState>, headers: HeaderMap, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = app.entry(&headers)?;
    let e = entry.lock().await;
    let served = e
        .current
        .as_ref()
        .filter(|s| s.handle == id)
        .ok_or_else(|| ApiError::NotFound(format!("scene {id} is not open")))?;
    let raw = std::fs::read(app.dir(served.source).join(format!("{}.cspc", served.scene_id))).map_err(|err| ApiError::Internal(err.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], Bytes::from(raw)).into_response())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClickIn {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub timestamp_ms: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Submission {
    pub clicks: Vec<ClickIn>,
    /// Seconds from first display to submission.
    pub elapsed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitReply {
    pub phase: String,
    /// Training scenes only.
    pub passed: Option<bool>,
    pub batch_complete: bool,
    /// `committed` or `discarded` once a batch completes.
    pub outcome: Option<String>,
    pub records: Option<usize>,
    pub session: SessionView,
}

async fn submit_clicks(
    State(app): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    Json(sub): Json<Submission>,
) -> ApiResult<Json<SubmitReply>> {
    let entry = app.entry(&headers)?;
    let mut e = entry.lock().await;
    let served = match &e.current {
        Some(s) if s.handle == id => s.clone(),
        Some(_) => return Err(ApiError::Conflict(format!("scene {id} is not the open scene"))),
        None => return Err(ApiError::Conflict("no scene is open; request /scene/next first".into())),
    };
    if !(sub.elapsed.is_finite() && sub.elapsed >= 0.0) || sub.clicks.iter().any(|c| !(c.x.is_finite() && c.y.is_finite() && c.z.is_finite())) {
        return Err(ApiError::BadRequest("clicks and elapsed time must be finite".into()));
    }
    let category = e.session.category;
    let clicks: Vec<Click<f64>> = sub
        .clicks
        .iter()
        .map(|c| Click {
            scene_id: served.scene_id.clone(),
            category,
            position: Point3::new(c.x, c.y, c.z),
            timestamp_ms: c.timestamp_ms,
        })
        .collect();

    let mut reply = SubmitReply {
        phase: if served.source == Source::Training { "training" } else { "annotating" }.into(),
        passed: None,
        batch_complete: false,
        outcome: None,
        records: None,
        session: view(&e.session),
    };
    if served.source == Source::Training {
        let scene = load_scene::<f64>(&app.training_dir, &served.scene_id)?;
        let result = score_scene(&served.scene_id, category, &clicks, &scene.objects, sub.elapsed, &app.qa);
        reply.passed = Some(result.passed);
        advance_training(&mut e.session, result.clone(), &app.qa)?;
        e.last_review = Some((served.handle.clone(), result, scene.objects));
    } else {
        let complete = {
            let active = e.batch.as_mut().ok_or_else(|| ApiError::Conflict("no active batch".into()))?;
            active.submissions.insert(served.scene_id.clone(), SceneSubmission { clicks, elapsed: sub.elapsed });
            active.submissions.len() == active.batch.scene_ids.len()
        };
        if complete {
            let active = e.batch.take().expect("checked above");
            let golden = load_scene::<f64>(&app.golden_dir, active.batch.golden_scene())?;
            let outcome = process_batch(&mut e.session, &active.batch, &active.submissions, &golden.objects, &app.qa, &app.db)?;
            reply.batch_complete = true;
            match outcome {
                BatchOutcome::Committed { records, .. } => {
                    reply.outcome = Some("committed".into());
                    reply.records = Some(records);
                }
                BatchOutcome::Discarded { .. } => {
                    reply.outcome = Some("discarded".into());
                    reply.records = Some(0);
                    // The pool scenes still need labels.
                    let mut q = app.queue.lock().expect("scene queue");
                    for (i, id) in active.batch.scene_ids.iter().enumerate() {
                        if i != active.batch.golden_position {
                            q.push_back(id.clone());
                        }
                    }
                }
            }
        }
    }
    e.current = None;
    reply.session = view(&e.session);
    app.persist(&e)?;
    Ok(Json(reply))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewClick {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub timestamp_ms: u64,
    /// Inside a ground-truth box: shown green, otherwise red.
    pub inside: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewBox {
    #[serde(rename = "box")]
    pub bbox: Box3D<f64>,
    pub found: bool,
}

/// What the review window shows after a training scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub scene_id: String,
    pub recall: f64,
    pub precision: f64,
    pub elapsed: f64,
    pub time_budget: f64,
    pub passed: bool,
    pub clicks: Vec<ReviewClick>,
    pub boxes: Vec<ReviewBox>,
}

async fn review(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Review>> {
    let entry = app.entry(&headers)?;
    let e = entry.lock().await;
    let (handle, r, objects) = e.last_review.as_ref().ok_or_else(|| ApiError::NotFound("no training scene reviewed yet".into()))?;
    let boxes = objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.category == r.category)
        .map(|(i, o)| ReviewBox {
            bbox: o.bbox,
            found: !r.missed.contains(&i),
        })
        .collect();
    Ok(Json(Review {
        scene_id: handle.clone(),
        recall: r.recall,
        precision: r.precision,
        elapsed: r.elapsed,
        time_budget: r.time_budget,
        passed: r.passed,
        clicks: r
            .clicks
            .iter()
            .zip(&r.verdicts)
            .map(|(c, v)| ReviewClick {
                x: c.position.x,
                y: c.position.y,
                z: c.position.z,
                timestamp_ms: c.timestamp_ms,
                inside: v.inside,
            })
            .collect(),
        boxes,
    }))
}
