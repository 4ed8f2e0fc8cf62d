//! Latency estimation over HTTP: an axum server wrapping the analytical
//! model and the simulator, plus a blocking client.
//!
//! | method | path                | body                                  |
//! |--------|---------------------|---------------------------------------|
//! | POST   | `/v1/estimate`      | [`EstimateRequest`] → [`EstimateResponse`] |
//! | POST   | `/v1/estimate_batch`| `{"requests":[..]}` → `{"responses":[..]}` |
//! | GET    | `/v1/configs`       | [`ConfigList`]                        |
//! | GET    | `/v1/health`        | `ok`                                  |

mod client;
mod server;
pub mod wire;

pub use client::{ClientError, RemoteEstimator};
pub use server::{
    port_from_env, router, serve, state_from_env, ServiceState, StartupError, DEFAULT_CONFIG, DEFAULT_MAX_BATCH,
    DEFAULT_PORT,
};
pub use wire::{BatchItem, ConfigList, ErrorBody, EstimateRequest, EstimateResponse, Micros};
