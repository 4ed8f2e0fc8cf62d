use std::time::Duration;

use edgenas_core::estimator::Estimator;
use edgenas_core::search::{BoxError, LatencyEstimator};
use edgenas_core::ModelGraph;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use ureq::Agent;

use crate::wire::{BatchItem, BatchResponse, ErrorBody, EstimateResponse};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {message}")]
    Unreachable { url: String, message: String },
    #[error("server answered {}: {}", .0.status, .0.error)]
    Rejected(ErrorBody),
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

/// Borrowing twin of [`crate::EstimateRequest`]; serializes identically.
#[derive(Serialize)]
struct RequestRef<'a> {
    model: &'a ModelGraph,
    estimator: Estimator,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a str>,
}

#[derive(Serialize)]
struct BatchRef<'a> {
    requests: Vec<RequestRef<'a>>,
}

/// Blocking client for a running latency service.
#[derive(Clone, Debug)]
pub struct RemoteEstimator {
    base_url: String,
    pub estimator: Estimator,
    /// Named config on the server; `None` uses the server default.
    pub config: Option<String>,
    agent: Agent,
}

impl RemoteEstimator {
    pub fn new(base_url: impl Into<String>, estimator: Estimator, config: Option<String>) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            estimator,
            config,
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn request<'a>(&'a self, model: &'a ModelGraph) -> RequestRef<'a> {
        RequestRef {
            model,
            estimator: self.estimator,
            config: self.config.as_deref(),
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| ClientError::Unreachable {
                url: url.clone(),
                message: e.to_string(),
            })?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 << 20)
            .read_to_string()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        if !status.is_success() {
            return Err(match serde_json::from_str::<ErrorBody>(&text) {
                Ok(body) => ClientError::Rejected(body),
                Err(_) => ClientError::Protocol(format!("{status}: {text}")),
            });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn estimate(&self, graph: &ModelGraph) -> Result<EstimateResponse, ClientError> {
        self.post("/v1/estimate", &self.request(graph))
    }

    /// One wire call; element failures come back in place.
    pub fn estimate_batch(&self, graphs: &[ModelGraph]) -> Result<Vec<BatchItem>, ClientError> {
        let body = BatchRef {
            requests: graphs.iter().map(|g| self.request(g)).collect(),
        };
        let reply: BatchResponse = self.post("/v1/estimate_batch", &body)?;
        if reply.responses.len() != graphs.len() {
            return Err(ClientError::Protocol(format!(
                "sent {} requests, got {} responses",
                graphs.len(),
                reply.responses.len()
            )));
        }
        Ok(reply.responses)
    }

    pub fn health(&self) -> Result<String, ClientError> {
        let url = format!("{}/v1/health", self.base_url);
        let mut resp = self.agent.get(&url).call().map_err(|e| ClientError::Unreachable {
            url,
            message: e.to_string(),
        })?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

impl LatencyEstimator for RemoteEstimator {
    fn latency_us(&self, graph: &ModelGraph) -> Result<f64, BoxError> {
        Ok(self.estimate(graph)?.total_latency_us.0)
    }
}
