use std::collections::BTreeMap;
use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use edgenas_core::ir::{ModelError, ModelGraph};
use edgenas_core::{AcceleratorConfig, EstimateError};
use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;
use tokio::net::TcpListener;

use crate::wire::{
    violation_record, BatchItem, BatchRequest, BatchResponse, ConfigList, ErrorBody, EstimateRequest,
    EstimateResponse, NamedConfig,
};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_BATCH: usize = 256;
pub const DEFAULT_CONFIG: &str = "edgetpu-like";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot read config directory {path}: {message}")]
    ConfigDir { path: String, message: String },
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("default config {0:?} is not loaded")]
    MissingDefault(String),
}

/// Read-only state shared by every request.
#[derive(Clone, Debug)]
pub struct ServiceState {
    configs: BTreeMap<String, AcceleratorConfig>,
    default_config: String,
    max_batch: usize,
}

impl Default for ServiceState {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ServiceState {
    /// The two shipped presets, `edgetpu-like` (default) and `toy`.
    pub fn builtin() -> Self {
        let mut configs = BTreeMap::new();
        configs.insert(DEFAULT_CONFIG.to_owned(), AcceleratorConfig::edgetpu_like());
        configs.insert("toy".to_owned(), AcceleratorConfig::toy());
        Self {
            configs,
            default_config: DEFAULT_CONFIG.to_owned(),
            max_batch: DEFAULT_MAX_BATCH,
        }
    }

    /// Adds every `*.toml` in `dir`, named by file stem. Files override
    /// presets of the same name.
    pub fn load_dir(mut self, dir: &Path) -> Result<Self, StartupError> {
        let entries = std::fs::read_dir(dir).map_err(|e| StartupError::ConfigDir {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let cfg = AcceleratorConfig::load(&path).map_err(|e| StartupError::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            self.configs.insert(name, cfg);
        }
        Ok(self)
    }

    pub fn with_config(mut self, name: impl Into<String>, cfg: AcceleratorConfig) -> Self {
        self.configs.insert(name.into(), cfg);
        self
    }

    pub fn with_default(mut self, name: impl Into<String>) -> Result<Self, StartupError> {
        let name = name.into();
        if !self.configs.contains_key(&name) {
            return Err(StartupError::MissingDefault(name));
        }
        self.default_config = name;
        Ok(self)
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch;
        self
    }

    pub fn config_names(&self) -> impl Iterator<Item = &str> {
        self.configs.keys().map(String::as_str)
    }

    pub fn default_config(&self) -> &str {
        &self.default_config
    }

    /// Handles one estimate request body. Pure: the same value always gives
    /// the same outcome.
    pub fn estimate_value(&self, body: Value) -> Result<EstimateResponse, ErrorBody> {
        let request: EstimateRequest = serde_json::from_value(body).map_err(|e| error(StatusCode::BAD_REQUEST, e))?;
        self.estimate(request)
    }

    pub fn estimate(&self, request: EstimateRequest) -> Result<EstimateResponse, ErrorBody> {
        let name = request.config.as_deref().unwrap_or(&self.default_config);
        let cfg = self
            .configs
            .get(name)
            .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown config {name:?}")))?;
        let graph = ModelGraph::from_value(request.model).map_err(|e| match e {
            ModelError::Parse(message) => error(StatusCode::BAD_REQUEST, message),
            ModelError::Invalid(violations) => invalid(&violations),
        })?;
        let estimate = request.estimator.estimate(&graph, cfg).map_err(|e| match e {
            EstimateError::Validation(violations) => invalid(&violations),
            other => error(StatusCode::UNPROCESSABLE_ENTITY, other),
        })?;
        Ok(EstimateResponse::new(&estimate, request.estimator, name))
    }

    /// Handles a batch body; element results keep request order.
    pub fn estimate_batch(&self, batch: BatchRequest) -> Result<BatchResponse, ErrorBody> {
        if batch.requests.len() > self.max_batch {
            return Err(error(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("batch of {} exceeds the limit of {}", batch.requests.len(), self.max_batch),
            ));
        }
        let responses = batch
            .requests
            .into_par_iter()
            .map(|body| match self.estimate_value(body) {
                Ok(r) => BatchItem::Ok(r),
                Err(error) => BatchItem::Err { error },
            })
            .collect();
        Ok(BatchResponse { responses })
    }

    pub fn config_list(&self) -> ConfigList {
        ConfigList {
            default: self.default_config.clone(),
            configs: self
                .configs
                .iter()
                .map(|(name, config)| NamedConfig {
                    name: name.clone(),
                    config: config.clone(),
                })
                .collect(),
        }
    }
}

fn error(status: StatusCode, message: impl ToString) -> ErrorBody {
    ErrorBody {
        status: status.as_u16(),
        error: message.to_string(),
        violations: Vec::new(),
    }
}

fn invalid(violations: &[edgenas_core::Violation]) -> ErrorBody {
    ErrorBody {
        status: StatusCode::UNPROCESSABLE_ENTITY.as_u16(),
        error: format!("model failed validation with {} violation(s)", violations.len()),
        violations: violations.iter().map(violation_record).collect(),
    }
}

struct ApiError(ErrorBody);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

fn parse_body(body: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}"))))
}

/// Runs CPU-bound estimation off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ErrorBody> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(error(StatusCode::INTERNAL_SERVER_ERROR, e)))?
        .map_err(ApiError)
}

async fn estimate(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<EstimateResponse>, ApiError> {
    let value = parse_body(&body)?;
    blocking(move || state.estimate_value(value)).await.map(Json)
}

async fn estimate_batch(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<BatchResponse>, ApiError> {
    let batch: BatchRequest = serde_json::from_value(parse_body(&body)?)
        .map_err(|e| ApiError(error(StatusCode::BAD_REQUEST, e)))?;
    blocking(move || state.estimate_batch(batch)).await.map(Json)
}

async fn configs(State(state): State<Arc<ServiceState>>) -> Json<ConfigList> {
    Json(state.config_list())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/v1/estimate", post(estimate))
        .route("/v1/estimate_batch", post(estimate_batch))
        .route("/v1/configs", get(configs))
        .route("/v1/health", get(health))
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(Arc::new(state))
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: ServiceState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// `EDGENAS_PORT`, falling back to 8080.
pub fn port_from_env() -> Result<u16, String> {
    match std::env::var("EDGENAS_PORT") {
        Ok(text) => text.parse().map_err(|_| format!("EDGENAS_PORT={text:?} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

/// Built-in presets plus `EDGENAS_CONFIG_DIR` when set.
pub fn state_from_env() -> Result<ServiceState, StartupError> {
    let state = ServiceState::builtin();
    match std::env::var_os("EDGENAS_CONFIG_DIR") {
        Some(dir) => state.load_dir(Path::new(&dir)),
        None => Ok(state),
    }
}
