//! JSON wire protocol for serving and querying next-token distributions.
//!
//! | method | path             | request                    | response                      |
//! |--------|------------------|----------------------------|-------------------------------|
//! | POST   | `/v1/tokenize`   | `{text}`                   | `{tokens: [{id, text}]}`      |
//! | POST   | `/v1/next`       | `{token_ids, top_k}`       | `{support: [{id, text, p}], other_mass}` |
//! | POST   | `/v1/batch_next` | `{prefixes, top_k}`        | `{results: [...]}`            |
//! | GET    | `/v1/info`       |                            | `{vocab_size, model_name, max_context}` |
//!
//! Probabilities travel as decimal strings with 17 significant digits,
//! which round-trips every `f64`. Failures are 4xx/5xx responses with body
//! `{error: {code, message}}`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendInfo};
use crate::oracle::OracleError;
use crate::types::{Distribution, TokenProb, TokenRef};

pub fn format_prob(p: f64) -> String {
    format!("{p:.16e}")
}

pub fn parse_prob(s: &str) -> Result<f64, BackendError> {
    let p: f64 = s
        .trim()
        .parse()
        .map_err(|_| BackendError::Protocol(format!("bad probability {s:?}")))?;
    if !p.is_finite() {
        return Err(BackendError::Protocol(format!(
            "non-finite probability {s:?}"
        )));
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<TokenRef>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextRequest {
    pub token_ids: Vec<u32>,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTokenProb {
    pub id: u32,
    pub text: String,
    pub p: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextResponse {
    pub support: Vec<WireTokenProb>,
    pub other_mass: String,
}

impl NextResponse {
    pub fn from_distribution(d: &Distribution) -> Self {
        Self {
            support: d
                .support
                .iter()
                .map(|e| WireTokenProb {
                    id: e.id,
                    text: e.text.clone(),
                    p: format_prob(e.p),
                })
                .collect(),
            other_mass: format_prob(d.other_mass),
        }
    }

    pub fn into_distribution(self) -> Result<Distribution, BackendError> {
        let support = self
            .support
            .into_iter()
            .map(|e| {
                Ok(TokenProb {
                    id: e.id,
                    p: parse_prob(&e.p)?,
                    text: e.text,
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Distribution::new(support, parse_prob(&self.other_mass)?)
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNextRequest {
    pub prefixes: Vec<Vec<u32>>,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchNextResponse {
    pub results: Vec<NextResponse>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        let (status, code) = match &e {
            BackendError::UnknownToken(_) => (StatusCode::BAD_REQUEST, "unknown_token"),
            BackendError::EmptyPrefix | BackendError::EmptyBatch | BackendError::EmptyText => {
                (StatusCode::BAD_REQUEST, "invalid_request")
            }
            BackendError::TokenizeUnsupported => (StatusCode::NOT_IMPLEMENTED, "unsupported"),
            BackendError::Oracle(OracleError::OffTemplate { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "off_template")
            }
            BackendError::Oracle(_) => (StatusCode::UNPROCESSABLE_ENTITY, "oracle_error"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self {
            status: r.status(),
            code: "malformed_request",
            message: r.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_owned(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<dyn Backend>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, BackendError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: e.to_string(),
        })?
        .map_err(ApiError::from)
}

fn resolve(backend: &dyn Backend, ids: &[u32]) -> Result<Vec<TokenRef>, BackendError> {
    ids.iter()
        .map(|&id| {
            backend
                .token_text(id)
                .map(|text| TokenRef::new(id, text))
                .ok_or(BackendError::UnknownToken(id))
        })
        .collect()
}

fn check_top_k(top_k: usize) -> Result<(), ApiError> {
    if top_k == 0 {
        return Err(ApiError::bad_request(
            "invalid_request",
            "top_k must be at least 1",
        ));
    }
    Ok(())
}

async fn info(State(backend): State<Shared>) -> Result<Json<BackendInfo>, ApiError> {
    Ok(Json(blocking(move || backend.info()).await?))
}

async fn tokenize(
    State(backend): State<Shared>,
    body: Result<Json<TokenizeRequest>, JsonRejection>,
) -> Result<Json<TokenizeResponse>, ApiError> {
    let Json(req) = body?;
    let tokens = blocking(move || backend.tokenize(&req.text)).await?;
    Ok(Json(TokenizeResponse { tokens }))
}

async fn next(
    State(backend): State<Shared>,
    body: Result<Json<NextRequest>, JsonRejection>,
) -> Result<Json<NextResponse>, ApiError> {
    let Json(req) = body?;
    check_top_k(req.top_k)?;
    let dist = blocking(move || {
        let prefix = resolve(backend.as_ref(), &req.token_ids)?;
        Ok(backend
            .next_distribution(&prefix)?
            .truncate_top_k(req.top_k))
    })
    .await?;
    Ok(Json(NextResponse::from_distribution(&dist)))
}

async fn batch_next(
    State(backend): State<Shared>,
    body: Result<Json<BatchNextRequest>, JsonRejection>,
) -> Result<Json<BatchNextResponse>, ApiError> {
    let Json(req) = body?;
    check_top_k(req.top_k)?;
    let dists = blocking(move || {
        let prefixes = req
            .prefixes
            .iter()
            .map(|ids| resolve(backend.as_ref(), ids))
            .collect::<Result<Vec<_>, _>>()?;
        backend.batch_next(&prefixes)
    })
    .await?;
    Ok(Json(BatchNextResponse {
        results: dists
            .into_iter()
            .map(|d| NextResponse::from_distribution(&d.truncate_top_k(req.top_k)))
            .collect(),
    }))
}

pub fn router(backend: Arc<dyn Backend>) -> Router {
    Router::new()
        .route("/v1/info", get(info))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/next", post(next))
        .route("/v1/batch_next", post(batch_next))
        .with_state(backend)
}

/// Serves until the process ends.
pub async fn serve(
    listener: tokio::net::TcpListener,
    backend: Arc<dyn Backend>,
) -> std::io::Result<()> {
    axum::serve(listener, router(backend)).await
}

/// A server running on a background thread; stopped on drop.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a new thread.
pub fn spawn_server(backend: Arc<dyn Backend>, addr: &str) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            let _ = axum::serve(listener, router(backend))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
