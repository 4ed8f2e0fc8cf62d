//! JSON bodies exchanged with the service.
//!
//! Latencies travel as decimal microseconds with exactly three fractional
//! digits. [`Micros`] writes that form verbatim and reads any JSON number.

use std::fmt;

use edgenas_core::estimator::{Estimator, ModelEstimate};
use edgenas_core::ir::Violation;
use edgenas_core::units::{fmt_micros, round_micros};
use edgenas_core::{AcceleratorConfig, Bound};
use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

/// Microseconds as they appear on the wire.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Micros(pub f64);

impl Micros {
    /// Rounds to the value the three-digit wire form denotes.
    pub fn rounded(x: f64) -> Self {
        Micros(round_micros(x))
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&fmt_micros(self.0))
    }
}

impl Serialize for Micros {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom("latency is not finite"));
        }
        let raw = RawValue::from_string(fmt_micros(self.0)).map_err(S::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Micros {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Micros)
    }
}

fn default_estimator() -> Estimator {
    Estimator::Apm
}

/// The model stays untyped here so that parse and validation failures can be
/// told apart (400 vs 422).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    pub model: Value,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub latency_us: Micros,
    pub bound: Bound,
    pub compute_us: Micros,
    pub dram_us: Micros,
    pub bus_us: Micros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub total_latency_us: Micros,
    pub per_layer: Vec<LayerRecord>,
    pub macs: u64,
    pub params: u64,
    pub estimator: Estimator,
    pub config: String,
}

impl EstimateResponse {
    /// Wire view of an in-process estimate; the only rounding is the
    /// three-digit latency rule.
    pub fn new(estimate: &ModelEstimate, estimator: Estimator, config: &str) -> Self {
        Self {
            total_latency_us: Micros::rounded(estimate.total_latency_us),
            per_layer: estimate
                .per_layer
                .iter()
                .map(|l| LayerRecord {
                    name: l.name.clone(),
                    latency_us: Micros::rounded(l.latency_us),
                    bound: l.bound,
                    compute_us: Micros::rounded(l.compute_us),
                    dram_us: Micros::rounded(l.dram_us),
                    bus_us: Micros::rounded(l.bus_us),
                })
                .collect(),
            macs: estimate.macs,
            params: estimate.params,
            estimator,
            config: config.to_owned(),
        }
    }
}

/// A violation with its rendered message alongside the structured fields.
pub fn violation_record(v: &Violation) -> Value {
    let mut value = serde_json::to_value(v).expect("violations serialize");
    if let Value::Object(map) = &mut value {
        map.insert("message".into(), Value::String(v.to_string()));
    }
    value
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub status: u16,
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRequest {
    pub requests: Vec<Value>,
}

/// One slot of a batch reply: a result, or the error that request alone hit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchItem {
    Ok(EstimateResponse),
    Err { error: ErrorBody },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub responses: Vec<BatchItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub name: String,
    #[serde(flatten)]
    pub config: AcceleratorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigList {
    pub default: String,
    pub configs: Vec<NamedConfig>,
}
