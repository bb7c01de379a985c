//! HTTP/JSON facade over training-loop runs: review queue with leases,
//! verdict submission, iteration control, metrics and image delivery.
//!
//! Every run lives in `<root>/<run_id>/` (see the run directory layout in
//! `stereo_core::review_loop`). All mutations of a run go through its
//! engine lock; training runs as one background job per run whose
//! completion is applied under the same lock. Every JSON body carries
//! `schema_version` and every response the `x-schema-version` header.

pub mod overlay;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use stereo_core::disector::Annotation;
use stereo_core::raster::{encode_png, load_mask};
use stereo_core::review_loop::{
    load_edf, DatasetManifest, Engine, IterationJob, LoopConfig, Phase, SubmitOutcome, Verdict,
};
use stereo_core::synth::{bootstrap_review, BootstrapConfig};
use stereo_core::Error;

pub const API_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_LEASE_SECS: u64 = 120;
pub const SCHEMA_HEADER: &str = "x-schema-version";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory holding one subdirectory per run.
    pub root: PathBuf,
    pub lease: Duration,
    /// When set, a fully decided review is committed and the next iteration
    /// started automatically until this many iterations are recorded.
    pub auto_advance: Option<u32>,
}

impl ServiceConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            root: root.into(),
            lease: Duration::from_secs(DEFAULT_LEASE_SECS),
            auto_advance: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct JobStatus {
    pub running: bool,
    pub phase: Option<Phase>,
    pub iteration: Option<u32>,
    pub error: Option<String>,
}

struct Lease {
    reviewer: String,
    expires: Instant,
}

pub struct Run {
    engine: Mutex<Engine>,
    job: Mutex<JobStatus>,
    leases: Mutex<BTreeMap<String, Lease>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Run {
    fn new(engine: Engine) -> Arc<Run> {
        Arc::new(Run {
            engine: Mutex::new(engine),
            job: Mutex::new(JobStatus::default()),
            leases: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn job_status(&self) -> JobStatus {
        lock(&self.job).clone()
    }
}

pub struct AppState {
    config: ServiceConfig,
    runs: Mutex<BTreeMap<String, Arc<Run>>>,
    creating: Mutex<BTreeSet<String>>,
}

impl AppState {
    /// Open every run found under the root. Runs whose state fails to load
    /// are reported and skipped.
    pub fn open(config: ServiceConfig) -> stereo_core::Result<Arc<AppState>> {
        std::fs::create_dir_all(&config.root).map_err(|e| Error::Io {
            path: config.root.clone(),
            source: e,
        })?;
        let mut runs = BTreeMap::new();
        let entries = std::fs::read_dir(&config.root).map_err(|e| Error::Io {
            path: config.root.clone(),
            source: e,
        })?;
        for entry in entries.flatten() {
            let dir = entry.path();
            if !dir.join("state.json").is_file() {
                continue;
            }
            match Engine::open(&dir) {
                Ok(engine) => {
                    let id = engine.state().run_id.clone();
                    runs.insert(id, Run::new(engine));
                }
                Err(e) => eprintln!("skipping run {}: {e}", dir.display()),
            }
        }
        Ok(Arc::new(AppState {
            config,
            runs: Mutex::new(runs),
            creating: Mutex::new(BTreeSet::new()),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn run(&self, id: &str) -> Option<Arc<Run>> {
        lock(&self.runs).get(id).cloned()
    }

    /// Restart the jobs of iterations interrupted by a shutdown. Must be
    /// called from within a Tokio runtime.
    pub fn resume_interrupted(self: &Arc<Self>) {
        let runs: Vec<Arc<Run>> = lock(&self.runs).values().cloned().collect();
        for run in runs {
            let job = lock(&run.engine).resume_job();
            if let Some(job) = job {
                spawn_job(self.clone(), run, job);
            }
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
    pending: Option<Vec<String>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            field: None,
            pending: None,
        }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, message),
            Error::Conflict(_) | Error::State(_) | Error::ReviewPaused(_) => {
                ApiError::new(StatusCode::CONFLICT, message)
            }
            Error::PendingItems(ids) => ApiError {
                pending: Some(ids),
                ..ApiError::new(StatusCode::CONFLICT, message)
            },
            Error::Manifest { field, .. } => ApiError::new(StatusCode::BAD_REQUEST, message).field(field),
            Error::InvalidArgument(_) | Error::Shape(_) | Error::OutOfBounds(_) | Error::Json(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, message)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "schema_version": API_SCHEMA_VERSION, "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        if let Some(p) = self.pending {
            body["pending"] = json!(p);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn with_schema(mut v: Value) -> Json<Value> {
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), json!(API_SCHEMA_VERSION));
    }
    Json(v)
}

fn find_run(state: &AppState, id: &str) -> ApiResult<Arc<Run>> {
    state
        .run(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run {id}")))
}

fn status_of(engine: &Engine, job: &JobStatus) -> Phase {
    match (job.running, job.phase) {
        (true, Some(p)) => p,
        _ => engine.state().phase,
    }
}

fn summary(engine: &Engine, job: &JobStatus) -> Value {
    let st = engine.state();
    let (train, active, test) = st.partition.sizes();
    json!({
        "run_id": st.run_id,
        "iteration": st.iteration,
        "status": status_of(engine, job),
        "queue_remaining": engine.queue().len(),
        "pending_total": st.pending.len(),
        "partition": { "train": train, "active": active, "test": test },
        "records": st.records,
        "job": job,
    })
}

/// Run the job on a blocking thread and apply its output. Failures are
/// recorded in the job status; the run stays in the training phase so the
/// job can be resumed.
fn spawn_job(state: Arc<AppState>, run: Arc<Run>, job: IterationJob) {
    *lock(&run.job) = JobStatus {
        running: true,
        phase: Some(Phase::Training),
        iteration: Some(job.iteration),
        error: None,
    };
    tokio::task::spawn_blocking(move || {
        let out = job.run(|p| lock(&run.job).phase = Some(p));
        let res = out.and_then(|o| lock(&run.engine).finish_iteration(o));
        {
            let mut js = lock(&run.job);
            js.running = false;
            js.phase = None;
            js.error = res.as_ref().err().map(|e| e.to_string());
        }
        if res.is_ok() {
            if let Err(e) = auto_advance(&state, &run) {
                lock(&run.job).error = Some(e.message);
            }
        }
    });
}

/// Commit a fully decided review and start the next iteration when auto
/// advance is on and the target has not been reached.
fn auto_advance(state: &Arc<AppState>, run: &Arc<Run>) -> ApiResult<()> {
    let Some(target) = state.config.auto_advance else {
        return Ok(());
    };
    let job = {
        let mut eng = lock(&run.engine);
        if eng.state().phase != Phase::AwaitingReview || !eng.queue().is_empty() {
            return Ok(());
        }
        eng.commit_iteration(false)?;
        if eng.state().records.len() as u32 >= target || eng.state().partition.train.is_empty() {
            return Ok(());
        }
        eng.start_iteration()?
    };
    spawn_job(state.clone(), run.clone(), job);
    Ok(())
}

#[derive(Deserialize)]
struct CreateRun {
    run_id: String,
    /// Path of a dataset manifest; relative entries resolve against its
    /// directory.
    manifest: String,
    test_mouse: String,
    #[serde(default)]
    config: Option<LoopConfig>,
    /// Bootstrap verdicts per image; computed with the classical pipeline
    /// and the scripted reviewer when absent.
    #[serde(default)]
    bootstrap: Option<BTreeMap<String, Verdict>>,
    #[serde(default)]
    bootstrap_config: Option<BootstrapConfig>,
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

async fn create_run(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateRun = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")).field("body"))?;
    if !valid_run_id(&req.run_id) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "run_id must be 1-64 of [A-Za-z0-9._-]").field("run_id"));
    }
    let dir = state.config.root.join(&req.run_id);
    {
        let runs = lock(&state.runs);
        let mut creating = lock(&state.creating);
        if runs.contains_key(&req.run_id) || creating.contains(&req.run_id) || dir.join("state.json").exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("run {} already exists", req.run_id)));
        }
        creating.insert(req.run_id.clone());
    }
    let st = state.clone();
    let id = req.run_id.clone();
    let created = tokio::task::spawn_blocking(move || init_run(&dir, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()));
    lock(&st.creating).remove(&id);
    let engine = created??;
    let body = summary(&engine, &JobStatus::default());
    lock(&st.runs).insert(id, Run::new(engine));
    Ok((StatusCode::CREATED, with_schema(body)).into_response())
}

fn init_run(dir: &Path, req: CreateRun) -> ApiResult<Engine> {
    let mut manifest = DatasetManifest::load_resolved(&req.manifest).map_err(|e| match e {
        Error::Manifest { .. } => ApiError::from(e),
        other => ApiError::new(StatusCode::BAD_REQUEST, other.to_string()).field("manifest"),
    })?;
    manifest.validate()?;
    manifest.check_files()?;
    if !manifest.items.iter().any(|it| it.mouse_id == req.test_mouse) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("no items for test mouse {}", req.test_mouse))
            .field("test_mouse"));
    }
    let config = req.config.unwrap_or_default();
    config.validate().map_err(|e| ApiError::from(e).field("config"))?;
    let bootstrap = match req.bootstrap {
        Some(b) => b,
        None => {
            let bc = req.bootstrap_config.unwrap_or_default();
            bootstrap_review(&mut manifest, &req.test_mouse, &bc, dir.join("asa_masks"))?
        }
    };
    Ok(Engine::init(dir, &manifest, &bootstrap, &req.test_mouse, config, &req.run_id)?)
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Value> {
    let runs: Vec<Arc<Run>> = lock(&state.runs).values().cloned().collect();
    let list: Vec<Value> = runs
        .iter()
        .map(|r| {
            let job = r.job_status();
            summary(&lock(&r.engine), &job)
        })
        .collect();
    with_schema(json!({ "runs": list }))
}

async fn get_run(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let run = find_run(&state, &id)?;
    let job = run.job_status();
    let body = summary(&lock(&run.engine), &job);
    Ok(with_schema(body))
}

fn item_urls(run_id: &str, image_id: &str) -> Value {
    let base = format!("/runs/{run_id}/images/{image_id}");
    json!({
        "edf": format!("{base}/edf"),
        "mask": format!("{base}/mask"),
        "overlay": format!("{base}/overlay"),
        "annotation": format!("{base}/annotation"),
    })
}

fn item_status(v: Option<Verdict>) -> &'static str {
    match v {
        None => "pending",
        Some(Verdict::Accept) => "accepted",
        Some(Verdict::Reject) => "rejected",
    }
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    reviewer: Option<String>,
}

async fn queue_next(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Response> {
    let run = find_run(&state, &id)?;
    let job = run.job_status();
    let eng = lock(&run.engine);
    let status = status_of(&eng, &job);
    if status != Phase::AwaitingReview {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("run is not awaiting review (status {})", phase_name(status)),
        ));
    }
    let reviewer = q.reviewer.unwrap_or_else(|| "anonymous".into());
    let queue = eng.queue();
    let now = Instant::now();
    let mut leases = lock(&run.leases);
    leases.retain(|item, l| l.expires > now && queue.binary_search(item).is_ok());
    let pick = queue
        .iter()
        .find(|item| leases.get(*item).is_none_or(|l| l.reviewer == reviewer));
    let Some(image_id) = pick.cloned() else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    leases.insert(
        image_id.clone(),
        Lease {
            reviewer: reviewer.clone(),
            expires: now + state.config.lease,
        },
    );
    let body = json!({
        "run_id": id,
        "image_id": image_id,
        "iteration": eng.state().iteration,
        "status": "pending",
        "reviewer": reviewer,
        "lease_seconds": state.config.lease.as_secs(),
        "remaining": queue.len(),
        "urls": item_urls(&id, &image_id),
    });
    Ok(with_schema(body).into_response())
}

async fn queue_list(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let run = find_run(&state, &id)?;
    let eng = lock(&run.engine);
    let items: Vec<Value> = eng
        .state()
        .pending
        .iter()
        .map(|img| {
            json!({
                "image_id": img,
                "iteration": eng.state().iteration,
                "status": item_status(eng.verdict(img)),
                "urls": item_urls(&id, img),
            })
        })
        .collect();
    Ok(with_schema(json!({ "run_id": id, "iteration": eng.state().iteration, "items": items })))
}

fn phase_name(p: Phase) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

#[derive(Deserialize)]
struct ReviewBody {
    image_id: String,
    verdict: Verdict,
    #[serde(default)]
    reviewer: Option<String>,
}

async fn submit_review(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: ReviewBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")).field("body"))?;
    let run = find_run(&state, &id)?;
    if run.job_status().running {
        return Err(ApiError::new(StatusCode::CONFLICT, "training job in progress"));
    }
    let reviewer = req.reviewer.unwrap_or_else(|| "anonymous".into());
    let (outcome, iteration, remaining) = {
        let mut eng = lock(&run.engine);
        let outcome = eng.submit(&req.image_id, req.verdict, &reviewer)?;
        (outcome, eng.state().iteration, eng.queue().len())
    };
    lock(&run.leases).remove(&req.image_id);
    auto_advance(&state, &run)?;
    Ok(with_schema(json!({
        "run_id": id,
        "image_id": req.image_id,
        "iteration": iteration,
        "verdict": req.verdict,
        "status": item_status(Some(req.verdict)),
        "outcome": match outcome {
            SubmitOutcome::Recorded => "recorded",
            SubmitOutcome::Duplicate => "duplicate",
        },
        "remaining": remaining,
    })))
}

#[derive(Deserialize, Default)]
struct IterateBody {
    #[serde(default)]
    force: bool,
}

async fn iterate(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: IterateBody = if body.iter().all(u8::is_ascii_whitespace) {
        IterateBody::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")).field("body"))?
    };
    let run = find_run(&state, &id)?;
    if run.job_status().running {
        return Err(ApiError::new(StatusCode::CONFLICT, "training job already running"));
    }
    let job = {
        let mut eng = lock(&run.engine);
        match eng.state().phase {
            Phase::AwaitingReview => {
                eng.commit_iteration(req.force)?;
                eng.start_iteration()?
            }
            Phase::Training => eng
                .resume_job()
                .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no job to resume"))?,
            _ => eng.start_iteration()?,
        }
    };
    lock(&run.leases).clear();
    spawn_job(state.clone(), run.clone(), job);
    let js = run.job_status();
    let body = summary(&lock(&run.engine), &js);
    Ok((StatusCode::ACCEPTED, with_schema(body)).into_response())
}

async fn metrics(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let run = find_run(&state, &id)?;
    let job = run.job_status();
    let eng = lock(&run.engine);
    let st = eng.state();
    let (train, active, test) = st.partition.sizes();
    Ok(with_schema(json!({
        "run_id": id,
        "iteration": st.iteration,
        "status": status_of(&eng, &job),
        "partition": { "train": train, "active": active, "test": test },
        "records": st.records,
        "evaluations": st.evaluations,
    })))
}

#[derive(Deserialize)]
struct ImageQuery {
    #[serde(default)]
    iteration: Option<u32>,
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn read_file(path: &Path) -> ApiResult<Vec<u8>> {
    std::fs::read(path).map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("{} not found", path.display())))
}

/// The stored mask shown for an image: the prediction of the requested (or
/// current) iteration, else the training mask.
fn mask_path(eng: &Engine, image_id: &str, iteration: Option<u32>) -> Option<PathBuf> {
    let k = iteration.unwrap_or(eng.state().iteration);
    let pred = eng.prediction_path(image_id, k);
    if pred.is_file() {
        return Some(pred);
    }
    let train = eng.dir().join("train_masks").join(format!("{image_id}.png"));
    (iteration.is_none() && train.is_file()).then_some(train)
}

async fn image(
    State(state): State<Arc<AppState>>,
    UrlPath((id, image_id, kind)): UrlPath<(String, String, String)>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let run = find_run(&state, &id)?;
    let (item, mask) = {
        let eng = lock(&run.engine);
        (eng.item(&image_id)?.clone(), mask_path(&eng, &image_id, q.iteration))
    };
    let res = tokio::task::spawn_blocking(move || -> ApiResult<Response> {
        match kind.as_str() {
            "edf" => match &item.edf {
                Some(p) if Path::new(p).is_file() => Ok(png_response(read_file(Path::new(p))?)),
                _ => Ok(png_response(encode_png(&load_edf(&item)?)?)),
            },
            "mask" => {
                let p = mask.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no mask for {image_id}")))?;
                Ok(png_response(read_file(&p)?))
            }
            "annotation" => {
                let bytes = read_file(Path::new(&item.annotation))?;
                Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
            }
            "overlay" => {
                let edf = load_edf(&item)?;
                let ann = Annotation::load(&item.annotation)?;
                let m = mask.map(load_mask).transpose()?;
                let img = overlay::render_overlay(&edf, m.as_ref(), &ann);
                Ok(png_response(encode_png(&img)?))
            }
            other => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown image kind {other}"))),
        }
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    res
}

async fn health() -> Json<Value> {
    with_schema(json!({ "status": "ok" }))
}

async fn add_schema_header(mut res: Response) -> Response {
    res.headers_mut()
        .insert(SCHEMA_HEADER, HeaderValue::from(API_SCHEMA_VERSION));
    res
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/queue", get(queue_list))
        .route("/runs/{id}/queue/next", get(queue_next))
        .route("/runs/{id}/review", post(submit_review))
        .route("/runs/{id}/iterate", post(iterate))
        .route("/runs/{id}/metrics", get(metrics))
        .route("/runs/{id}/images/{image_id}/{kind}", get(image))
        .fallback(not_found)
        .layer(axum::middleware::map_response(add_schema_header))
        .with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(config: ServiceConfig, addr: &str) -> std::io::Result<()> {
    let state = AppState::open(config).map_err(std::io::Error::other)?;
    state.resume_interrupted();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
