//! HTTP/JSON front end over the pointat operations.
//!
//! Compute-bound requests run on blocking threads; training runs as a
//! background job polled through `/v1/jobs/{id}`. Object-store writes are
//! serialized through a single lock.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pointat_api::*;
use serde::Serialize;
use tokio::net::TcpListener;

mod jobs;
pub mod ops;

pub use jobs::{write_metrics, Jobs};

#[derive(Default)]
pub struct AppState {
    jobs: Arc<Jobs>,
    store_lock: Mutex<()>,
}

type Shared = Arc<AppState>;

struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Usage => StatusCode::BAD_REQUEST,
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

/// JSON body whose rejections are reported as usage errors.
struct Body<T>(T);

impl<T, S> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = Failure;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(Failure(ApiError::new(ErrorKind::Usage, e.body_text()))),
        }
    }
}

type Reply<T> = Result<Json<T>, Failure>;

async fn blocking<T, F>(f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(Failure),
        Err(e) => Err(Failure(ApiError::new(ErrorKind::Internal, format!("worker panicked: {e}")))),
    }
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn gen_data(Body(req): Body<GenDataRequest>) -> Reply<GenDataResponse> {
    blocking(move || ops::gen_data(&req)).await
}

async fn start_train(State(app): State<Shared>, Body(req): Body<TrainRequest>) -> Result<(StatusCode, Json<JobCreated>), Failure> {
    let jobs = Arc::clone(&app.jobs);
    let id = tokio::task::spawn_blocking(move || jobs.start(req))
        .await
        .map_err(|e| Failure(ApiError::new(ErrorKind::Internal, e.to_string())))??;
    Ok((StatusCode::ACCEPTED, Json(JobCreated { id })))
}

fn unknown_job(id: u64) -> Failure {
    Failure(ApiError::new(ErrorKind::NotFound, format!("no job with id {id}")))
}

async fn job_status(State(app): State<Shared>, Path(id): Path<u64>) -> Reply<JobStatus> {
    app.jobs.get(id).map(|j| Json(j.status())).ok_or_else(|| unknown_job(id))
}

async fn cancel_job(State(app): State<Shared>, Path(id): Path<u64>) -> Reply<JobStatus> {
    app.jobs.cancel(id).map(Json).ok_or_else(|| unknown_job(id))
}

async fn eval(Body(req): Body<EvalRequest>) -> Reply<EvalResponse> {
    blocking(move || ops::eval(&req)).await
}

async fn teach(State(app): State<Shared>, Body(req): Body<TeachRequest>) -> Reply<TeachResponse> {
    blocking(move || ops::teach_op(&req, &app.store_lock)).await
}

async fn find(State(app): State<Shared>, Body(req): Body<FindRequest>) -> Reply<FindResponse> {
    blocking(move || ops::find_op(&req, &app.store_lock)).await
}

async fn dump_attention(Body(req): Body<DumpAttentionRequest>) -> Reply<DumpAttentionResponse> {
    blocking(move || ops::dump_attention(&req)).await
}

async fn not_found() -> Failure {
    Failure(ApiError::new(ErrorKind::NotFound, "no such endpoint"))
}

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/datasets", post(gen_data))
        .route("/train", post(start_train))
        .route("/jobs/{id}", get(job_status).delete(cancel_job))
        .route("/eval", post(eval))
        .route("/teach", post(teach))
        .route("/find", post(find))
        .route("/dump-attention", post(dump_attention));
    Router::new().nest(API_PREFIX, api).fallback(not_found).with_state(state)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve(listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(AppState::default()))).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, std::future::pending()).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    Ok(local)
}
