//! JSON-over-HTTP API backing the matching workbench.
//!
//! Reads share the corpus store; writes go through its single writer, and
//! the store's commit leaves manifest and payloads untouched on failure.
//! Store access and candidate scans run on the blocking pool so the
//! request executor stays responsive.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use varkit::corpus::{
    review_pair, scan_candidates, Candidate, CorpusError, CorpusStore, KeyHint, PairRecord, PairReview,
    ScoreConfig, DEFAULT_TOP_K,
};
use varkit::par::Execution;
use varkit::NoteEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    Invalid,
    Internal,
}

/// Body of every non-success response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into() }
    }

    fn status(&self) -> StatusCode {
        match self.code {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Invalid => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        let code = match &e {
            CorpusError::NotFound { .. } | CorpusError::Dangling { .. } => ErrorCode::NotFound,
            CorpusError::Duplicate { .. } => ErrorCode::Conflict,
            CorpusError::BadWindow { .. }
            | CorpusError::EmptyWindow
            | CorpusError::InvalidId(_)
            | CorpusError::PairMismatch { .. }
            | CorpusError::BadWeights => ErrorCode::Invalid,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(ErrorCode::Invalid, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(ErrorCode::Invalid, e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Job {
    Running,
    Done { candidates: Vec<Candidate> },
    Failed { error: ApiError },
}

pub struct AppState {
    store: RwLock<CorpusStore>,
    jobs: Mutex<HashMap<u64, Job>>,
    next_job: AtomicU64,
}

type Shared = Arc<AppState>;

pub fn router(store: CorpusStore) -> Router {
    let state = Arc::new(AppState { store: RwLock::new(store), jobs: Mutex::new(HashMap::new()), next_job: AtomicU64::new(1) });
    Router::new()
        .route("/api/standards", get(list_standards))
        .route("/api/standards/{id}/segments", get(standard_segments))
        .route("/api/performances", get(list_performances))
        .route("/api/performances/{id}/notes", get(performance_notes))
        .route("/api/segments/{id}/candidates", get(candidates))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/pairs", get(list_pairs).post(create_pair))
        .route("/api/pairs/{id}", axum::routing::delete(delete_pair))
        .route("/api/pairs/{id}/review", get(review))
        .route("/api/midi/{id}", get(midi))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") })
        .with_state(state)
}

/// Runs `f` with the store read-locked on the blocking pool.
async fn read<T, F>(state: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&CorpusStore) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let store = state.store.read().map_err(|_| ApiError::new(ErrorCode::Internal, "store lock poisoned"))?;
        f(&store)
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
}

async fn write<T, F>(state: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut CorpusStore) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut store = state.store.write().map_err(|_| ApiError::new(ErrorCode::Internal, "store lock poisoned"))?;
        f(&mut store)
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StandardView {
    pub id: String,
    pub title: String,
    pub key_hint: Option<KeyHint>,
    pub segments: usize,
}

async fn list_standards(State(state): State<Shared>) -> ApiResult<Json<Vec<StandardView>>> {
    read(&state, |store| {
        let m = store.manifest();
        Ok(Json(
            m.standards
                .iter()
                .map(|s| StandardView {
                    id: s.id.clone(),
                    title: s.title.clone(),
                    key_hint: s.key_hint,
                    segments: m.segments_of(&s.id).len(),
                })
                .collect(),
        ))
    })
    .await
}

async fn standard_segments(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    read(&state, move |store| {
        let m = store.manifest();
        if m.standard(&id).is_none() {
            return Err(CorpusError::NotFound { kind: "standard", id }.into());
        }
        Ok(Json(m.segments_of(&id)).into_response())
    })
    .await
}

async fn list_performances(State(state): State<Shared>) -> ApiResult<Response> {
    read(&state, |store| Ok(Json(&store.manifest().performances).into_response())).await
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    start_s: Option<f64>,
    end_s: Option<f64>,
}

/// Notes whose onset falls in `[start_s, end_s)`, in seconds.
async fn performance_notes(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<WindowQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<NoteEvent>>> {
    let Query(q) = query?;
    let start = q.start_s.unwrap_or(0.0);
    let end = q.end_s.unwrap_or(f64::INFINITY);
    if !(start >= 0.0 && end > start) {
        return Err(CorpusError::BadWindow { start_s: start, end_s: end }.into());
    }
    read(&state, move |store| {
        let seq = store.load_performance(&id)?;
        Ok(Json(seq.notes.into_iter().filter(|n| n.onset >= start && n.onset < end).collect()))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    performance_id: String,
    top_k: Option<usize>,
    #[serde(default)]
    transposition_invariant: bool,
    /// Return a job id at once instead of waiting for the scan.
    #[serde(default, rename = "async")]
    background: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateList {
    pub segment_id: String,
    pub performance_id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobTicket {
    pub job_id: u64,
    pub status_url: String,
}

fn run_scan(state: &AppState, segment_id: &str, q: &CandidateQuery) -> ApiResult<Vec<Candidate>> {
    let (original, notes, duration) = {
        let store = state.store.read().map_err(|_| ApiError::new(ErrorCode::Internal, "store lock poisoned"))?;
        let original = store.load_original(segment_id)?;
        let perf = store
            .manifest()
            .performance(&q.performance_id)
            .ok_or_else(|| CorpusError::NotFound { kind: "performance", id: q.performance_id.clone() })?;
        let duration = perf.duration_s;
        (original, store.load_performance(&q.performance_id)?.notes, duration)
    };
    let config = ScoreConfig { transposition_invariant: q.transposition_invariant, ..ScoreConfig::default() };
    let top_k = q.top_k.unwrap_or(DEFAULT_TOP_K);
    Ok(scan_candidates(&original, &notes, duration, &config, top_k, Execution::Parallel)?)
}

async fn candidates(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<CandidateQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    if q.background {
        let job_id = state.next_job.fetch_add(1, Ordering::Relaxed);
        state.jobs.lock().expect("job table").insert(job_id, Job::Running);
        let worker = state.clone();
        tokio::task::spawn_blocking(move || {
            let job = match run_scan(&worker, &id, &q) {
                Ok(candidates) => Job::Done { candidates },
                Err(error) => Job::Failed { error },
            };
            worker.jobs.lock().expect("job table").insert(job_id, job);
        });
        let ticket = JobTicket { job_id, status_url: format!("/api/jobs/{job_id}") };
        return Ok((StatusCode::ACCEPTED, Json(ticket)).into_response());
    }
    let worker = state.clone();
    let segment_id = id.clone();
    let performance_id = q.performance_id.clone();
    let candidates = tokio::task::spawn_blocking(move || run_scan(&worker, &id, &q))
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))??;
    Ok(Json(CandidateList { segment_id, performance_id, candidates }).into_response())
}

async fn job_status(State(state): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    state
        .jobs
        .lock()
        .expect("job table")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("job {id} not found")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatePair {
    pub original_id: String,
    pub performance_id: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub annotator: String,
}

async fn create_pair(State(state): State<Shared>, body: Result<Json<CreatePair>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let record = write(&state, move |store| {
        Ok(store.pair_window(&req.original_id, &req.performance_id, req.start_s, req.end_s, &req.annotator, Utc::now())?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn list_pairs(State(state): State<Shared>) -> ApiResult<Response> {
    read(&state, |store| Ok(Json(&store.manifest().pairs).into_response())).await
}

async fn delete_pair(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<PairRecord>> {
    write(&state, move |store| Ok(Json(store.delete_pair(&id)?))).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReviewView {
    pub pair: PairRecord,
    pub review: PairReview,
}

async fn review(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<ReviewView>> {
    read(&state, move |store| {
        let pair =
            store.manifest().pair(&id).cloned().ok_or_else(|| CorpusError::NotFound { kind: "pair", id: id.clone() })?;
        let original = store.load_original(&pair.original_id)?;
        let variation = store.load_variation(&pair.variation_id)?;
        let review = review_pair(&original, &variation, &ScoreConfig::default())?;
        Ok(Json(ReviewView { pair, review }))
    })
    .await
}

async fn midi(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = read(&state, move |store| Ok(store.midi_bytes(&id)?)).await?;
    Ok(([(header::CONTENT_TYPE, "audio/midi")], bytes).into_response())
}
