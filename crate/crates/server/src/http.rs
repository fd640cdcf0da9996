//! HTTP/JSON routes.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use hivemind_core::api::{ApiError, BenchRequest, CheckRequest, DownstreamQuery, InvokeRequest, RegisterRequest, SfrRequest, StateQuery};

use crate::service::{ApiResult, Service};

pub struct HttpError(ApiError);

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        HttpError(e)
    }
}

pub fn status_of(kind: &str) -> StatusCode {
    match kind {
        "bad_request" | "invalid_workflow" => StatusCode::BAD_REQUEST,
        "not_found" | "unknown_workflow" => StatusCode::NOT_FOUND,
        "conflict" => StatusCode::CONFLICT,
        "unavailable" => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (status_of(&self.0.kind), Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, HttpError>;

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Service) -> ApiResult<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&svc)).await {
        Ok(r) => r.map(Json).map_err(HttpError),
        Err(e) => Err(HttpError(ApiError::new("internal", e))),
    }
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/connect", post(connect))
        .route("/invoke", post(invoke))
        .route("/workflows", get(workflows).post(register))
        .route("/sfr", post(sfr))
        .route("/check", post(check))
        .route("/bench", post(bench))
        .route("/trace/flush", post(flush))
        .route("/trace/state", post(state))
        .route("/trace/downstream", post(downstream))
        .with_state(svc)
}

async fn connect(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    blocking(svc, |s| s.connect()).await
}

async fn invoke(State(svc): State<Arc<Service>>, Json(req): Json<InvokeRequest>) -> impl IntoResponse {
    blocking(svc, move |s| s.invoke(&req)).await
}

async fn workflows(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    blocking(svc, |s| Ok(s.workflows())).await
}

async fn register(State(svc): State<Arc<Service>>, Json(req): Json<RegisterRequest>) -> impl IntoResponse {
    blocking(svc, move |s| s.register(&req)).await
}

async fn sfr(State(svc): State<Arc<Service>>, Json(req): Json<SfrRequest>) -> impl IntoResponse {
    blocking(svc, move |_| Service::sfr(&req)).await
}

async fn check(State(svc): State<Arc<Service>>, Json(req): Json<CheckRequest>) -> impl IntoResponse {
    blocking(svc, move |s| s.check(&req)).await
}

async fn bench(State(svc): State<Arc<Service>>, Json(req): Json<BenchRequest>) -> impl IntoResponse {
    blocking(svc, move |s| s.bench(&req)).await
}

async fn flush(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    blocking(svc, |s| s.flush_trace()).await
}

async fn state(State(svc): State<Arc<Service>>, Json(q): Json<StateQuery>) -> impl IntoResponse {
    blocking(svc, move |s| s.query_state(&q)).await
}

async fn downstream(State(svc): State<Arc<Service>>, Json(q): Json<DownstreamQuery>) -> impl IntoResponse {
    blocking(svc, move |s| s.query_downstream(&q)).await
}
