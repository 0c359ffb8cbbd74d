//! Thin async client for the review service.

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use signalforge_core::alignment::{AlignmentStatus, Decision};
use signalforge_core::pipeline::PipelineRun;
use signalforge_core::review::{Page, ReviewItem, ReviewSummary};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with a non-success status.
    #[error("{status}: {message}")]
    Status { status: StatusCode, kind: String, message: String },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Transport(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReviewClient {
    base: String,
    http: reqwest::Client,
}

impl ReviewClient {
    pub fn new(base_url: &str) -> ReviewClient {
        ReviewClient {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        Err(ClientError::Status {
            status,
            kind: body["error"].as_str().unwrap_or("unknown").to_string(),
            message: body["message"].as_str().unwrap_or("").to_string(),
        })
    }

    async fn json<T: DeserializeOwned>(resp: reqwest::Result<Response>) -> Result<T, ClientError> {
        Ok(Self::check(resp?).await?.json().await?)
    }

    pub async fn list(
        &self,
        status: Option<AlignmentStatus>,
        offset: usize,
        limit: usize,
    ) -> Result<Page<ReviewSummary>, ClientError> {
        let mut query = vec![("offset", offset.to_string()), ("limit", limit.to_string())];
        if let Some(s) = status {
            query.push(("status", s.as_str().to_string()));
        }
        Self::json(self.http.get(self.url("/api/alignments")).query(&query).send().await).await
    }

    pub async fn get(&self, id: &str) -> Result<ReviewItem, ClientError> {
        Self::json(self.http.get(self.url(&format!("/api/alignments/{id}"))).send().await).await
    }

    pub async fn decide(&self, id: &str, action: Decision, actor: &str) -> Result<ReviewItem, ClientError> {
        let body = json!({ "action": action, "actor": actor });
        Self::json(
            self.http
                .post(self.url(&format!("/api/alignments/{id}/decision")))
                .json(&body)
                .send()
                .await,
        )
        .await
    }

    pub async fn regenerate(&self, id: &str, constraint: &str, actor: &str) -> Result<ReviewItem, ClientError> {
        let body = json!({ "constraint": constraint, "actor": actor });
        Self::json(
            self.http
                .post(self.url(&format!("/api/alignments/{id}/regenerate")))
                .json(&body)
                .send()
                .await,
        )
        .await
    }

    pub async fn artifact_code(&self, id: &str) -> Result<String, ClientError> {
        let resp = self.http.get(self.url(&format!("/api/artifacts/{id}/code"))).send().await?;
        Ok(Self::check(resp).await?.text().await?)
    }

    pub async fn run(&self, run_id: &str) -> Result<PipelineRun, ClientError> {
        Self::json(self.http.get(self.url(&format!("/api/runs/{run_id}"))).send().await).await
    }

    pub async fn resume(&self, run_id: &str) -> Result<PipelineRun, ClientError> {
        Self::json(self.http.post(self.url(&format!("/api/runs/{run_id}/resume"))).send().await).await
    }
}
