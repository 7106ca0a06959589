//! HTTP service for the two-phase plugin protocol: the client first asks for
//! a cached verdict by url and submits the full session only on a miss.
//!
//! Body schemas are documented in `docs/API.md`.

mod charset;
mod config;

pub use charset::{declared_charset, decode_body, DecodeError};
pub use config::{ConfigError, ServerConfig, TokenTable};

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{score_features, AdaptiveError, RetrainJob, RetrainTrigger};
use crate::classifier::{ClassifierError, GdParams, Model};
use crate::corpus::{load_corpus, CorpusError, Label, QASession, SessionInvalid};
use crate::features::FeatureVector;
use crate::role::Role;
use crate::store::{CachedVerdict, SnapshotReader, Store, StoreError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shared service state. Mutations go through the store mutex; scoring
/// reads the published (model, counts) pair without taking it.
pub struct Service {
    store: Mutex<Store>,
    reader: SnapshotReader,
    tokens: TokenTable,
    trigger: RetrainTrigger,
    params: GdParams,
    retrain_lock: tokio::sync::Mutex<()>,
}

impl Service {
    /// Opens the configured store and, if it holds no labeled sessions yet,
    /// loads the seed corpus and trains the first model from it.
    pub fn open(cfg: &ServerConfig) -> Result<Arc<Service>, ServerError> {
        let mut store = match &cfg.store_dir {
            Some(dir) => Store::open(dir)?,
            None => Store::in_memory(),
        };
        if let Some(path) = &cfg.seed_corpus {
            if store.state().counts().labeled_sessions() == 0 {
                let corpus = load_corpus(path)?;
                seed_store(&mut store, &corpus, &cfg.params)?;
            }
        }
        store.compact()?;
        Ok(Service::from_store(store, cfg))
    }

    pub fn from_store(store: Store, cfg: &ServerConfig) -> Arc<Service> {
        Arc::new(Service {
            reader: store.reader(),
            store: Mutex::new(store),
            tokens: cfg.tokens.clone(),
            trigger: cfg.trigger,
            params: cfg.params,
            retrain_lock: tokio::sync::Mutex::new(()),
        })
    }

    fn store(&self) -> MutexGuard<'_, Store> {
        // a panicking handler cannot leave the store half-updated: every
        // mutation is checked before it is applied
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn current_model(&self) -> Arc<Model> {
        Arc::clone(&self.reader.load().model)
    }

    pub fn session(&self, url: &str) -> Option<QASession> {
        self.store().state().session(url).cloned()
    }

    pub fn model(&self, version: u64) -> Option<Model> {
        self.store().state().model(version).cloned()
    }

    /// Writes a compacted snapshot, if the store is on disk.
    pub fn compact(&self) -> Result<(), StoreError> {
        self.store().compact()
    }

    /// Retrains on the full labeled pool and publishes the next version.
    /// Training runs outside the store mutex; concurrent retrains queue.
    pub async fn retrain(self: &Arc<Self>) -> Result<RetrainResponse, AdaptiveError> {
        let _one_at_a_time = self.retrain_lock.lock().await;
        let job = RetrainJob::prepare(&self.store())?;
        let params = self.params;
        let (job, model) = tokio::task::spawn_blocking(move || job.run(&params).map(|m| (job, m)))
            .await
            .expect("training task panicked")?;
        job.publish(&mut self.store(), model)?;
        log::info!("published model v{} trained on {} sessions", job.version(), job.pool_size());
        Ok(RetrainResponse {
            version: job.version(),
            training_size: job.pool_size(),
        })
    }
}

/// Loads a labeled corpus into the store and trains a model from it when
/// both classes are present.
pub fn seed_store(store: &mut Store, corpus: &[QASession], params: &GdParams) -> Result<(), ServerError> {
    for s in corpus {
        store.upsert_session(s)?;
        if let Some(label) = s.label {
            store.set_label(&s.url, label, Role::Admin)?;
        }
    }
    match RetrainJob::prepare(store) {
        Ok(job) => {
            let model = job.run(params)?;
            job.publish(store, model)?;
            log::info!("seeded model v{} from {} labeled sessions", job.version(), job.pool_size());
        }
        Err(AdaptiveError::NoNewLabels) | Err(AdaptiveError::Classifier(ClassifierError::SingleClassTrainingSet)) => {
            log::warn!("seed corpus cannot train a model; serving the cold model");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

// ---- wire types ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub url: String,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub found: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<u64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub score: f64,
    pub label: Label,
    pub alert: bool,
    pub model_version: u64,
    /// No trained model existed yet.
    pub cold: bool,
    pub features: FeatureVector,
}

impl From<CachedVerdict> for SessionResponse {
    fn from(v: CachedVerdict) -> Self {
        SessionResponse {
            score: v.score,
            label: v.label,
            alert: v.label.is_campaign(),
            model_version: v.model_version,
            cold: v.model_version == 0,
            features: v.features,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub url: String,
    pub label: Label,
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub url: String,
    pub label: Label,
    /// False when the session already carried this label.
    pub changed: bool,
    pub pending_labels: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminRequest {
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub version: u64,
    pub training_size: usize,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct RescoreResponse {
    pub rescored: usize,
    pub model_version: u64,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: u64,
    pub sessions: usize,
    pub labeled: u64,
    pub pending_labels: u64,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Deserialize)]
struct ModelQuery {
    version: Option<u64>,
}

// ---- errors ----

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::ConflictingContent(_) => StatusCode::CONFLICT,
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Unauthorized(_) => StatusCode::FORBIDDEN,
            StoreError::InvalidSession(SessionInvalid::TimeOrder { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            StoreError::InvalidSession(_) => StatusCode::BAD_REQUEST,
            _ => {
                log::error!("store failure: {e}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<AdaptiveError> for ApiError {
    fn from(e: AdaptiveError) -> Self {
        match e {
            AdaptiveError::NoNewLabels => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            AdaptiveError::Classifier(ClassifierError::SingleClassTrainingSet) => {
                ApiError::new(StatusCode::CONFLICT, e.to_string())
            }
            AdaptiveError::Store(e) => e.into(),
            other => {
                log::error!("retrain failure: {other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
            }
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(headers: &HeaderMap, body: &[u8]) -> Result<T, ApiError> {
    let content_type = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok());
    let text = decode_body(content_type, body)
        .map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

/// Token from the body, falling back to an `Authorization: Bearer` header.
fn caller_role(svc: &Service, headers: &HeaderMap, body_token: Option<&str>) -> Result<Role, ApiError> {
    let header_token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    body_token
        .or(header_token)
        .and_then(|t| svc.tokens.role(t))
        .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, "unknown or missing token"))
}

fn require_admin(svc: &Service, headers: &HeaderMap, body: &[u8]) -> Result<(), ApiError> {
    let req: AdminRequest = if body.iter().all(u8::is_ascii_whitespace) {
        AdminRequest::default()
    } else {
        parse_body(headers, body)?
    };
    let role = caller_role(svc, headers, req.token.as_deref())?;
    if role.can_administer() {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::FORBIDDEN, format!("role `{role}` may not administer")))
    }
}

// ---- handlers ----

type Svc = State<Arc<Service>>;

async fn score_by_url(State(svc): Svc, headers: HeaderMap, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let req: ScoreRequest = parse_body(&headers, &body)?;
    if req.url.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "url must be non-empty"));
    }
    let hit = svc.store().find_by_url(&req.url).copied();
    Ok(Json(match hit {
        Some(v) => ScoreResponse {
            found: true,
            score: Some(v.score),
            label: Some(v.label),
            model_version: Some(v.model_version),
        },
        None => ScoreResponse {
            found: false,
            score: None,
            label: None,
            model_version: None,
        },
    }))
}

async fn submit_session(State(svc): Svc, headers: HeaderMap, body: Bytes) -> Result<Json<SessionResponse>, ApiError> {
    let session: QASession = parse_body(&headers, &body)?;
    if session.label.is_some() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "submissions may not carry a label"));
    }
    session.validate().map_err(StoreError::from)?;

    if let Some(cached) = cached_for(&svc, &session)? {
        return Ok(Json(cached.into()));
    }
    // score against one published (model, counts) pair, outside the writer
    let snap = svc.reader.load();
    let features = score_features(&session, &snap.counts, &snap.model);
    let verdict = snap.model.classify(&features);
    let verdict = CachedVerdict {
        score: verdict.score,
        label: verdict.label,
        model_version: snap.model.version,
        features,
    };

    let mut store = svc.store();
    store.upsert_session(&session)?;
    // a concurrent identical submission may have won the race
    if let Some(cached) = store.find_by_url(&session.url) {
        return Ok(Json((*cached).into()));
    }
    store.record_verdict(&session.url, verdict)?;
    Ok(Json(verdict.into()))
}

/// The cached verdict for an already-stored identical session.
fn cached_for(svc: &Service, session: &QASession) -> Result<Option<CachedVerdict>, ApiError> {
    let store = svc.store();
    match store.state().session(&session.url) {
        None => Ok(None),
        Some(existing) if !existing.same_content(session) => {
            Err(StoreError::ConflictingContent(session.url.clone()).into())
        }
        Some(_) => Ok(store.find_by_url(&session.url).copied()),
    }
}

async fn feedback(State(svc): Svc, headers: HeaderMap, body: Bytes) -> Result<Json<FeedbackResponse>, ApiError> {
    let req: FeedbackRequest = parse_body(&headers, &body)?;
    let role = caller_role(&svc, &headers, req.token.as_deref())?;
    let (changed, pending) = {
        let mut store = svc.store();
        let changed = store.set_label(&req.url, req.label, role)?;
        (changed, store.state().pending_labels())
    };
    if svc.trigger.due(pending) {
        spawn_auto_retrain(&svc);
    }
    Ok(Json(FeedbackResponse {
        url: req.url,
        label: req.label,
        changed,
        pending_labels: pending,
    }))
}

fn spawn_auto_retrain(svc: &Arc<Service>) {
    let svc = Arc::clone(svc);
    tokio::spawn(async move {
        // a retrain already in flight will be followed by another trigger
        if svc.retrain_lock.try_lock().is_err() {
            return;
        }
        match svc.retrain().await {
            Ok(r) => log::info!("automatic retrain produced v{}", r.version),
            Err(AdaptiveError::NoNewLabels) => {}
            Err(e) => log::warn!("automatic retrain skipped: {e}"),
        }
    });
}

async fn admin_retrain(State(svc): Svc, headers: HeaderMap, body: Bytes) -> Result<Json<RetrainResponse>, ApiError> {
    require_admin(&svc, &headers, &body)?;
    Ok(Json(svc.retrain().await?))
}

async fn admin_rescore(State(svc): Svc, headers: HeaderMap, body: Bytes) -> Result<Json<RescoreResponse>, ApiError> {
    require_admin(&svc, &headers, &body)?;
    let mut store = svc.store();
    let snap = svc.reader.load();
    let mut urls: Vec<String> = store.state().verdicts().map(|(u, _)| u.clone()).collect();
    urls.sort();
    for url in &urls {
        let session = store.state().session(url).expect("verdicts refer to stored sessions").clone();
        let features = score_features(&session, &snap.counts, &snap.model);
        let v = snap.model.classify(&features);
        store.record_verdict(
            url,
            CachedVerdict {
                score: v.score,
                label: v.label,
                model_version: snap.model.version,
                features,
            },
        )?;
    }
    Ok(Json(RescoreResponse {
        rescored: urls.len(),
        model_version: snap.model.version,
    }))
}

async fn health(State(svc): Svc) -> Json<HealthResponse> {
    let store = svc.store();
    let st = store.state();
    Json(HealthResponse {
        status: "ok".into(),
        model_version: st.latest_version(),
        sessions: st.session_count(),
        labeled: st.counts().labeled_sessions(),
        pending_labels: st.pending_labels(),
    })
}

async fn model(State(svc): Svc, Query(q): Query<ModelQuery>) -> Result<Json<Model>, ApiError> {
    match q.version {
        None => Ok(Json((*svc.current_model()).clone())),
        Some(v) => svc
            .model(v)
            .map(Json)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no model version {v}"))),
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/score", post(score_by_url))
        .route("/session", post(submit_session))
        .route("/feedback", post(feedback))
        .route("/admin/retrain", post(admin_retrain))
        .route("/admin/rescore", post(admin_rescore))
        .route("/health", get(health))
        .route("/model", get(model))
        .with_state(svc)
}

/// Serves until `shutdown` resolves, then compacts the store.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Arc<Service>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    axum::serve(listener, router(Arc::clone(&svc)))
        .with_graceful_shutdown(shutdown)
        .await?;
    svc.compact()?;
    Ok(())
}

/// A server running on its own thread and runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ServerError>>>,
}

impl RunningServer {
    /// Binds `listen` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(svc: Arc<Service>, listen: &str) -> Result<RunningServer, ServerError> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(listen))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let service = Arc::clone(&svc);
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, svc, async {
                let _ = rx.await;
            }))
        });
        Ok(RunningServer {
            addr,
            service,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn stop(mut self) -> Result<(), ServerError> {
        self.halt()
    }

    fn halt(&mut self) -> Result<(), ServerError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("server thread panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}
