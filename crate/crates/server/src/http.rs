//! HTTP front end of the [`Store`]. Bodies are JSON. Every response,
//! errors included, carries the event-log sequence number in
//! [`SEQ_HEADER`].

use std::collections::BTreeSet;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use autolab_core::assets;
use autolab_core::benchmark::{BenchmarkDag, BenchmarkSpec};
use autolab_core::evaluator::EvaluationReport;

use crate::state::{ServerError, SubmitRequest};
use crate::store::Store;

pub const SEQ_HEADER: &str = "x-autolab-seq";

#[derive(Clone)]
struct App {
    store: Arc<Store>,
    tokens: Arc<BTreeSet<String>>,
}

pub struct ApiError(ServerError);

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        ApiError(e)
    }
}

pub fn status_of(e: &ServerError) -> StatusCode {
    match e {
        ServerError::UnknownBenchmark(_) | ServerError::UnknownJob(_) => StatusCode::NOT_FOUND,
        ServerError::UnknownEvaluator(_) => StatusCode::FORBIDDEN,
        ServerError::DigestMismatch { .. } | ServerError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServerError::LeaseExpired(_) | ServerError::WrongEvaluator { .. } | ServerError::Conflict(_) => StatusCode::CONFLICT,
        ServerError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Body of `POST /benchmarks`: the TOML text of a benchmark or of a DAG.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkUpload {
    Spec(String),
    Dag(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluatorRegistration {
    pub id: String,
    pub caps: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimQuery {
    pub evaluator: String,
    /// Comma-separated capability tags; the registered ones when absent.
    pub caps: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartBody {
    pub evaluator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultBody {
    pub evaluator: String,
    pub report: EvaluationReport,
}

async fn add_benchmark(State(app): State<App>, Json(up): Json<BenchmarkUpload>) -> ApiResult<serde_json::Value> {
    let bad = |e: autolab_core::benchmark::BenchmarkError| ServerError::Invalid(e.to_string());
    let id = match up {
        BenchmarkUpload::Spec(text) => {
            let spec = BenchmarkSpec::from_toml(&text).map_err(bad)?;
            let id = spec.id.clone();
            app.store.register_benchmark(spec)?;
            id
        }
        BenchmarkUpload::Dag(text) => {
            let dag = BenchmarkDag::from_toml(&text).map_err(bad)?;
            let id = dag.id.clone();
            app.store.register_dag(dag)?;
            id
        }
    };
    Ok(Json(json!({ "id": id })))
}

async fn add_evaluator(State(app): State<App>, Json(r): Json<EvaluatorRegistration>) -> ApiResult<serde_json::Value> {
    app.store.register_evaluator(&r.id, &r.caps)?;
    Ok(Json(json!({ "id": r.id })))
}

async fn submit(State(app): State<App>, Json(req): Json<SubmitRequest>) -> ApiResult<serde_json::Value> {
    let (jobs, _) = app.store.submit(&req)?;
    Ok(Json(json!({ "jobs": jobs })))
}

async fn claim(State(app): State<App>, Query(q): Query<ClaimQuery>) -> ApiResult<serde_json::Value> {
    let caps: Option<Vec<String>> =
        q.caps.map(|c| c.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect());
    let (a, _) = app.store.claim(&q.evaluator, caps.as_deref())?;
    Ok(Json(json!({ "assignment": a })))
}

async fn start(State(app): State<App>, Path(id): Path<String>, Json(b): Json<StartBody>) -> ApiResult<serde_json::Value> {
    let (job, _) = app.store.start(&id, &b.evaluator)?;
    Ok(Json(json!(job)))
}

async fn result(State(app): State<App>, Path(id): Path<String>, Json(b): Json<ResultBody>) -> ApiResult<serde_json::Value> {
    let (outcome, _) = app.store.post_result(&id, &b.evaluator, b.report)?;
    Ok(Json(json!(outcome)))
}

async fn job(State(app): State<App>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let (job, _) = app.store.job(&id)?;
    Ok(Json(json!(job)))
}

async fn leaderboard(State(app): State<App>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let (board, _) = app.store.leaderboard(&id)?;
    Ok(Json(json!(board)))
}

fn bearer(req: &Request) -> Option<&str> {
    req.headers().get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

async fn guard(State(app): State<App>, req: Request, next: Next) -> Response {
    let authorized = app.tokens.is_empty() || bearer(&req).is_some_and(|t| app.tokens.contains(t));
    let mut resp = if authorized {
        next.run(req).await
    } else {
        (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or unknown bearer token" }))).into_response()
    };
    resp.headers_mut().insert(SEQ_HEADER, HeaderValue::from(app.store.seq()));
    resp
}

/// Routes of the challenges server. An empty token set disables
/// authentication.
pub fn router(store: Arc<Store>, tokens: impl IntoIterator<Item = String>) -> Router {
    let app = App { store, tokens: Arc::new(tokens.into_iter().collect()) };
    Router::new()
        .route("/benchmarks", post(add_benchmark))
        .route("/benchmarks/{id}/leaderboard", get(leaderboard))
        .route("/evaluators", post(add_evaluator))
        .route("/submissions", post(submit))
        .route("/jobs/claim", get(claim))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/start", post(start))
        .route("/jobs/{id}/result", post(result))
        .layer(middleware::from_fn_with_state(app.clone(), guard))
        .with_state(app)
}

/// Registers the benchmarks shipped with the crate.
pub fn register_builtin_benchmarks(store: &Store) -> Result<(), ServerError> {
    let bad = |e: autolab_core::benchmark::BenchmarkError| ServerError::Invalid(e.to_string());
    for text in [assets::LF_SIM, assets::LF_LAB] {
        store.register_benchmark(BenchmarkSpec::from_toml(text).map_err(bad)?)?;
    }
    store.register_dag(BenchmarkDag::from_toml(assets::LF_PROGRESSION).map_err(bad)?)?;
    Ok(())
}

/// Serves until `shutdown` resolves, requeueing expired leases every
/// `sweep_every`.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    tokens: Vec<String>,
    sweep_every: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    let sweeper = store.clone();
    let sweep = tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep_every);
        loop {
            tick.tick().await;
            if let Err(e) = sweeper.expire_leases() {
                log::error!("lease sweep failed: {e}");
            }
        }
    });
    let out = axum::serve(listener, router(store, tokens)).with_graceful_shutdown(shutdown).await;
    sweep.abort();
    out
}

/// A server on its own runtime thread.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub store: Arc<Store>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<io::Result<()>>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_now()
    }

    fn stop_now(&mut self) -> io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.stop_now();
    }
}

/// Binds `addr` and serves on a background thread.
pub fn spawn_server(addr: &str, store: Arc<Store>, tokens: Vec<String>) -> io::Result<RunningServer> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let s = store.clone();
    let thread = thread::spawn(move || {
        rt.block_on(serve(listener, s, tokens, Duration::from_secs(1), async move {
            let _ = rx.await;
        }))
    });
    Ok(RunningServer { addr: bound, store, stop: Some(tx), thread: Some(thread) })
}
