//! Client for the tsmor HTTP service, plus the request and response types
//! both sides share.
//!
//! Paths in requests (bundles, snapshot imports, output directories) are
//! resolved on the server's filesystem.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tsmor_core::bundle::Manifest;
use tsmor_core::config::RunConfig;
use tsmor_core::hf::{Sample, TestCase};
use tsmor_core::pipeline::{BenchmarkReport, OnlineResult};
use tsmor_core::ErrorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRequest {
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineResponse {
    pub bundle: PathBuf,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRequest {
    pub bundle: PathBuf,
    pub z: Vec<Sample>,
    /// Return the predicted fields, not only the error estimates.
    #[serde(default)]
    pub fields: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineResponse {
    pub test: TestCase,
    /// In request order; `fields` is empty unless requested.
    pub results: Vec<OnlineResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRequest {
    pub config: RunConfig,
    /// Evaluate this bundle instead of running the offline phase.
    #[serde(default)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResponse {
    pub bundle: PathBuf,
    pub manifest: Manifest,
    pub report: BenchmarkReport,
}

/// Error body of every non-success response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to the service failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{}", .0.message)]
    Api(ApiError),
}

impl ClientError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Transport(_) => ErrorKind::Io,
            ClientError::Api(e) => e.kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`. Requests have no timeout:
    /// an offline phase can run for many minutes.
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        if resp.status().is_success() {
            return Ok(resp.json().await?);
        }
        let status = resp.status();
        let text = resp.text().await?;
        Err(ClientError::Api(serde_json::from_str(&text).unwrap_or(ApiError {
            kind: ErrorKind::Io,
            message: format!("service answered {status}: {text}"),
        })))
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn offline(&self, req: &OfflineRequest) -> Result<OfflineResponse, ClientError> {
        self.post("/offline", req).await
    }

    pub async fn online(&self, req: &OnlineRequest) -> Result<OnlineResponse, ClientError> {
        self.post("/online", req).await
    }

    pub async fn benchmark(&self, req: &BenchmarkRequest) -> Result<BenchmarkResponse, ClientError> {
        self.post("/benchmark", req).await
    }
}
