//! Async client for the pointat service.

use std::time::Duration;

use pointat_api::*;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service rejected the request.
    #[error("{0}")]
    Api(ApiError),
    #[error("cannot reach {url}: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("unexpected response from {url} ({status}): {body}")]
    Protocol { url: String, status: StatusCode, body: String },
}

impl ClientError {
    /// The service's error class; transport and protocol failures count as
    /// internal.
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api(e) => e.kind,
            _ => ErrorKind::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8750`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize, T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&B>) -> Result<T> {
        let url = format!("{}{API_PREFIX}{path}", self.base);
        let mut req = self.http.request(method, &url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        if status.is_success() {
            if let Ok(v) = serde_json::from_slice(&bytes) {
                return Ok(v);
            }
        } else if let Ok(e) = serde_json::from_slice::<ApiError>(&bytes) {
            return Err(ClientError::Api(e));
        }
        Err(ClientError::Protocol { url, status, body: String::from_utf8_lossy(&bytes).into_owned() })
    }

    pub async fn health(&self) -> Result<Health> {
        self.call::<(), _>(Method::GET, "/health", None).await
    }

    pub async fn gen_data(&self, req: &GenDataRequest) -> Result<GenDataResponse> {
        self.call(Method::POST, "/datasets", Some(req)).await
    }

    pub async fn start_train(&self, req: &TrainRequest) -> Result<JobCreated> {
        self.call(Method::POST, "/train", Some(req)).await
    }

    pub async fn job(&self, id: u64) -> Result<JobStatus> {
        self.call::<(), _>(Method::GET, &format!("/jobs/{id}"), None).await
    }

    pub async fn cancel_job(&self, id: u64) -> Result<JobStatus> {
        self.call::<(), _>(Method::DELETE, &format!("/jobs/{id}"), None).await
    }

    /// Polls a job until it reaches a terminal state, calling `on_update`
    /// with every status seen.
    pub async fn wait_job(&self, id: u64, every: Duration, mut on_update: impl FnMut(&JobStatus)) -> Result<JobStatus> {
        loop {
            let status = self.job(id).await?;
            on_update(&status);
            if status.state.is_terminal() {
                return Ok(status);
            }
            tokio::time::sleep(every).await;
        }
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse> {
        self.call(Method::POST, "/eval", Some(req)).await
    }

    pub async fn teach(&self, req: &TeachRequest) -> Result<TeachResponse> {
        self.call(Method::POST, "/teach", Some(req)).await
    }

    pub async fn find(&self, req: &FindRequest) -> Result<FindResponse> {
        self.call(Method::POST, "/find", Some(req)).await
    }

    pub async fn dump_attention(&self, req: &DumpAttentionRequest) -> Result<DumpAttentionResponse> {
        self.call(Method::POST, "/dump-attention", Some(req)).await
    }
}
