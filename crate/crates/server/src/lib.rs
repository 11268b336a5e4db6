//! HTTP front end for [`ExposureService`] and the matching blocking client.
//!
//! | route               | body                         | reply                  |
//! |---------------------|------------------------------|------------------------|
//! | `POST /v1/diagnosis`| diagnosis upload (+ bearer)  | u32 BE inserted count  |
//! | `POST /v1/query`    | bucket query                 | bucket query response  |
//! | `GET /v1/export`    | -                            | 16-byte CCIs           |
//!
//! Errors come back as a non-2xx status with an `x-crosshash-error` header
//! naming the error class (`validation`, `protocol`, `capacity`, ...).

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use crosshash_core::client::QueryTransport;
use crosshash_core::service::ExposureService;
use crosshash_core::wire::{decode_export, decode_inserted, DiagnosisUpload};
use crosshash_core::{Error, IdBytes, Result};
use rand::rngs::OsRng;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub const ERROR_HEADER: &str = "x-crosshash-error";
const OCTET_STREAM: &str = "application/octet-stream";

pub fn router(service: Arc<ExposureService>) -> Router {
    Router::new()
        .route("/v1/diagnosis", post(diagnosis))
        .route("/v1/query", post(query))
        .route("/v1/export", get(export))
        .with_state(service)
}

/// Stable class names carried in the error header.
pub fn error_class(err: &Error) -> (StatusCode, &'static str) {
    match err {
        Error::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
        Error::Validation(_) | Error::Wire(_) => (StatusCode::BAD_REQUEST, "validation"),
        Error::Protocol(_) | Error::PrefixMismatch { .. } | Error::InvalidGroupElement | Error::PrefixBits(_) => {
            (StatusCode::UNPROCESSABLE_ENTITY, "protocol")
        }
        Error::Capacity { .. } => (StatusCode::INSUFFICIENT_STORAGE, "capacity"),
        Error::Disabled(_) => (StatusCode::NOT_FOUND, "disabled"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

fn reply(result: Result<Vec<u8>>) -> Response {
    match result {
        Ok(body) => ([(header::CONTENT_TYPE, OCTET_STREAM)], body).into_response(),
        Err(err) => {
            let (status, class) = error_class(&err);
            if status.is_server_error() {
                tracing::warn!(%err, "request failed");
            }
            (status, [(ERROR_HEADER, class)], err.to_string()).into_response()
        }
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

async fn diagnosis(State(svc): State<Arc<ExposureService>>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers).map(str::to_owned);
    // Uploads fsync the store log; keep that off the reactor.
    let result = tokio::task::spawn_blocking(move || svc.diagnosis_endpoint(token.as_deref(), &body))
        .await
        .unwrap_or_else(|e| Err(Error::Io(std::io::Error::other(e))));
    reply(result)
}

async fn query(State(svc): State<Arc<ExposureService>>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || svc.query_endpoint(&body, &mut OsRng))
        .await
        .unwrap_or_else(|e| Err(Error::Io(std::io::Error::other(e))));
    reply(result)
}

async fn export(State(svc): State<Arc<ExposureService>>) -> Response {
    reply(svc.export_endpoint())
}

/// A server running on its own runtime thread.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown_inner()
    }

    fn shutdown_inner(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| std::io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.shutdown_inner();
    }
}

/// Binds `listen` and serves until the returned handle is stopped or dropped.
pub fn spawn(service: Arc<ExposureService>, listen: &str) -> std::io::Result<RunningServer> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(TcpListener::bind(listen))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            axum::serve(listener, router(service))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(RunningServer { addr, shutdown: Some(tx), thread: Some(thread) })
}

/// Serves on the current thread until Ctrl-C.
pub fn serve_forever(service: Arc<ExposureService>, listen: &str) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = TcpListener::bind(listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "exposure service listening");
        axum::serve(listener, router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

/// Blocking HTTP client for the three endpoints.
#[derive(Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(base_url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpClient { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(resp: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Vec<u8>> {
        let mut resp = resp.map_err(|e| Error::Transport { retryable: true, message: e.to_string() })?;
        let status = resp.status();
        let class = resp
            .headers()
            .get(ERROR_HEADER)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_string();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| Error::Transport { retryable: true, message: e.to_string() })?;
        if status.is_success() {
            return Ok(body);
        }
        let message = String::from_utf8_lossy(&body).into_owned();
        Err(match class.as_str() {
            "unauthorized" => Error::Unauthorized,
            "validation" => Error::Validation(message),
            "protocol" => Error::Protocol(message),
            "capacity" => Error::Capacity { what: "server bucket", len: 0, limit: 0 },
            "disabled" => Error::Disabled("export"),
            _ => Error::Transport { retryable: status.is_server_error(), message: format!("{status}: {message}") },
        })
    }

    pub fn upload(&self, upload: &DiagnosisUpload, token: Option<&str>) -> Result<u32> {
        let mut req = self.agent.post(self.url("/v1/diagnosis")).header("content-type", OCTET_STREAM);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        decode_inserted(&Self::finish(req.send(&upload.encode()?[..]))?)
    }

    pub fn export(&self) -> Result<Vec<IdBytes>> {
        decode_export(&Self::finish(self.agent.get(self.url("/v1/export")).call())?)
    }
}

impl QueryTransport for HttpClient {
    fn post_query(&self, body: &[u8]) -> Result<Vec<u8>> {
        Self::finish(self.agent.post(self.url("/v1/query")).header("content-type", OCTET_STREAM).send(body))
    }
}
