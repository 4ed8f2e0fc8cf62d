//! Analytical performance model: a roofline with three ceilings (array compute
//! scaled by utilization, DRAM bandwidth, on-chip bus bandwidth).
//!
//! Every layer is lowered to primitive ops. Composite blocks sum the compute
//! time and traffic of their sub-ops and take the max per ceiling, i.e. the
//! sub-ops run back to back with no fusion between them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{validate, LayerSpec, ModelGraph, PrimOp, TensorShape};
use crate::EstimateError;

const US_PER_S: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    /// PE rows; the contraction dimension maps here.
    pub array_rows: u32,
    /// PE columns; output channels map here.
    pub array_cols: u32,
    pub clock_hz: f64,
    /// Bytes per second.
    pub dram_bw: f64,
    /// Bytes per second. Never below `dram_bw`.
    pub onchip_bus_bw: f64,
    pub buffer_bytes: u64,
    #[serde(default = "default_bytes_per_element")]
    pub bytes_per_element: f64,
}

fn default_bytes_per_element() -> f64 {
    1.0
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("onchip_bus_bw ({bus}) must not be below dram_bw ({dram})")]
    BusSlowerThanDram { bus: f64, dram: f64 },
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl AcceleratorConfig {
    /// Illustrative Edge-TPU-class defaults. Not a claim about real hardware.
    pub fn edgetpu_like() -> Self {
        Self {
            array_rows: 64,
            array_cols: 64,
            clock_hz: 480e6,
            dram_bw: 25.6e9,
            onchip_bus_bw: 256e9,
            buffer_bytes: 8 << 20,
            bytes_per_element: 1.0,
        }
    }

    /// 4x4 array at 1 MHz; handy for hand-checkable arithmetic.
    pub fn toy() -> Self {
        Self {
            array_rows: 4,
            array_cols: 4,
            clock_hz: 1e6,
            dram_bw: 1e6,
            onchip_bus_bw: 8e6,
            buffer_bytes: 1 << 40,
            bytes_per_element: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("array_rows", self.array_rows as f64),
            ("array_cols", self.array_cols as f64),
            ("clock_hz", self.clock_hz),
            ("dram_bw", self.dram_bw),
            ("onchip_bus_bw", self.onchip_bus_bw),
            ("buffer_bytes", self.buffer_bytes as f64),
            ("bytes_per_element", self.bytes_per_element),
        ];
        for (name, value) in positive {
            // NaN fails this check too.
            if !(value > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.onchip_bus_bw < self.dram_bw {
            return Err(ConfigError::BusSlowerThanDram {
                bus: self.onchip_bus_bw,
                dram: self.dram_bw,
            });
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// MACs per second with every PE busy.
    pub fn peak_macs_per_s(&self) -> f64 {
        self.array_rows as f64 * self.array_cols as f64 * self.clock_hz
    }
}

/// Which ceiling set the latency of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Compute,
    Dram,
    Bus,
}

impl Bound {
    /// Argmax with tie-break compute > dram > bus.
    pub fn of(compute: f64, dram: f64, bus: f64) -> Self {
        if compute >= dram && compute >= bus {
            Bound::Compute
        } else if dram >= bus {
            Bound::Dram
        } else {
            Bound::Bus
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Bound::Compute => "compute",
            Bound::Dram => "dram",
            Bound::Bus => "bus",
        }
    }

    pub fn is_traffic(&self) -> bool {
        !matches!(self, Bound::Compute)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLatency {
    pub compute_us: f64,
    pub dram_us: f64,
    pub bus_us: f64,
    pub latency_us: f64,
    pub bound: Bound,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub per_layer: Vec<LayerLatency>,
    pub total_us: f64,
    pub macs: u64,
    pub params: u64,
}

/// Bytes moved by one layer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Traffic {
    pub dram_bytes: f64,
    pub bus_bytes: f64,
}

/// Number of times activations are streamed from DRAM when the working set
/// does not fit on chip. Weights are fetched once regardless.
pub fn refetch_factor(working_set_bytes: f64, cfg: &AcceleratorConfig) -> f64 {
    (working_set_bytes / cfg.buffer_bytes as f64).ceil().max(1.0)
}

pub fn prim_traffic(op: &PrimOp, cfg: &AcceleratorConfig) -> Traffic {
    let b = cfg.bytes_per_element;
    let activations = (op.input().elements() + op.output().elements()) as f64 * b;
    let weights = op.params() as f64 * b;
    let f = refetch_factor(activations + weights, cfg);
    Traffic {
        dram_bytes: weights + f * activations,
        bus_bytes: activations,
    }
}

pub fn traffic(
    layer: &LayerSpec,
    input: TensorShape,
    cfg: &AcceleratorConfig,
) -> Result<Traffic, EstimateError> {
    Ok(layer
        .lower(input)?
        .iter()
        .map(|op| prim_traffic(op, cfg))
        .fold(Traffic::default(), |acc, t| Traffic {
            dram_bytes: acc.dram_bytes + t.dram_bytes,
            bus_bytes: acc.bus_bytes + t.bus_bytes,
        }))
}

/// Fraction of `extent` lanes that carry useful work when it is folded onto
/// `lanes` physical lanes.
fn fold_efficiency(extent: u64, lanes: u32) -> f64 {
    let lanes = lanes as u64;
    extent as f64 / (lanes * extent.div_ceil(lanes)) as f64
}

pub fn prim_utilization(op: &PrimOp, cfg: &AcceleratorConfig) -> f64 {
    match op {
        PrimOp::Conv { out_channels, .. } => {
            fold_efficiency(op.contraction_depth(), cfg.array_rows)
                * fold_efficiency(*out_channels as u64, cfg.array_cols)
        }
        // Only one contraction row does useful work.
        PrimOp::Depthwise { input, .. } => {
            fold_efficiency(input.channels as u64, cfg.array_cols) / cfg.array_rows as f64
        }
        PrimOp::Pool { .. } => 1.0,
    }
}

fn prim_compute_us(op: &PrimOp, cfg: &AcceleratorConfig) -> f64 {
    let macs = op.macs();
    if macs == 0 {
        return 0.0;
    }
    macs as f64 / (cfg.peak_macs_per_s() * prim_utilization(op, cfg)) * US_PER_S
}

/// Array utilization of a layer. For composite blocks this is the MAC-weighted
/// effective value over the sub-ops.
pub fn utilization(
    layer: &LayerSpec,
    input: TensorShape,
    cfg: &AcceleratorConfig,
) -> Result<f64, EstimateError> {
    let ops = layer.lower(input)?;
    Ok(effective_utilization(&ops, cfg))
}

fn effective_utilization(ops: &[PrimOp], cfg: &AcceleratorConfig) -> f64 {
    if let [op] = ops {
        return prim_utilization(op, cfg);
    }
    let macs: u64 = ops.iter().map(PrimOp::macs).sum();
    let compute_us: f64 = ops.iter().map(|op| prim_compute_us(op, cfg)).sum();
    if macs == 0 || compute_us == 0.0 {
        return 1.0;
    }
    (macs as f64 / (cfg.peak_macs_per_s() * compute_us / US_PER_S)).min(1.0)
}

pub fn estimate_layer(
    layer: &LayerSpec,
    input: TensorShape,
    cfg: &AcceleratorConfig,
) -> Result<LayerLatency, EstimateError> {
    cfg.validate()?;
    let ops = layer.lower(input)?;
    Ok(estimate_ops(&ops, cfg))
}

fn estimate_ops(ops: &[PrimOp], cfg: &AcceleratorConfig) -> LayerLatency {
    let mut compute_us = 0.0;
    let mut moved = Traffic::default();
    for op in ops {
        compute_us += prim_compute_us(op, cfg);
        let t = prim_traffic(op, cfg);
        moved.dram_bytes += t.dram_bytes;
        moved.bus_bytes += t.bus_bytes;
    }
    let dram_us = moved.dram_bytes / cfg.dram_bw * US_PER_S;
    let bus_us = moved.bus_bytes / cfg.onchip_bus_bw * US_PER_S;
    LayerLatency {
        compute_us,
        dram_us,
        bus_us,
        latency_us: compute_us.max(dram_us).max(bus_us),
        bound: Bound::of(compute_us, dram_us, bus_us),
        utilization: effective_utilization(ops, cfg),
    }
}

pub fn estimate_model(
    graph: &ModelGraph,
    cfg: &AcceleratorConfig,
) -> Result<LatencyBreakdown, EstimateError> {
    cfg.validate()?;
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(EstimateError::Validation(violations));
    }
    let mut shape = graph.input;
    let mut per_layer = Vec::with_capacity(graph.layers.len());
    let (mut macs, mut params) = (0, 0);
    for layer in &graph.layers {
        let ops = layer.lower(shape)?;
        macs += ops.iter().map(PrimOp::macs).sum::<u64>();
        params += ops.iter().map(PrimOp::params).sum::<u64>();
        per_layer.push(estimate_ops(&ops, cfg));
        shape = layer.output_shape(shape)?;
    }
    Ok(LatencyBreakdown {
        total_us: per_layer.iter().map(|l| l.latency_us).sum(),
        per_layer,
        macs,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(kernel: u32, out_channels: u32) -> LayerSpec {
        LayerSpec::Conv2D {
            kernel,
            stride: 1,
            out_channels,
        }
    }

    #[test]
    fn traffic_examples() {
        let cfg = AcceleratorConfig::toy();
        let t = traffic(&conv(3, 16), TensorShape::new(16, 16, 8), &cfg).unwrap();
        assert_eq!(t.dram_bytes, 7_296.0);
        assert_eq!(t.bus_bytes, 6_144.0);

        let t = traffic(&LayerSpec::GlobalAvgPool, TensorShape::new(7, 7, 64), &cfg).unwrap();
        assert_eq!(t.dram_bytes, 3_200.0);

        let small = AcceleratorConfig {
            buffer_bytes: 4_096,
            ..cfg
        };
        let t = traffic(&conv(3, 16), TensorShape::new(16, 16, 8), &small).unwrap();
        assert_eq!(t.dram_bytes, 13_440.0);
    }

    #[test]
    fn utilization_examples() {
        let cfg = AcceleratorConfig::toy();
        let u = utilization(&conv(3, 16), TensorShape::new(16, 16, 8), &cfg).unwrap();
        assert_eq!(u, 1.0);

        let big = AcceleratorConfig::edgetpu_like();
        let u = utilization(&conv(3, 64), TensorShape::new(32, 32, 3), &big).unwrap();
        assert!((u - 27.0 / 64.0).abs() < 1e-15);

        let dw = LayerSpec::DepthwiseConv { kernel: 3, stride: 1 };
        for c in [1, 3, 4, 5, 64] {
            let u = utilization(&dw, TensorShape::new(8, 8, c), &cfg).unwrap();
            assert!(u <= 0.25);
        }
    }

    #[test]
    fn toy_roofline_examples() {
        let cfg = AcceleratorConfig::toy();
        let l = estimate_layer(&conv(3, 16), TensorShape::new(16, 16, 8), &cfg).unwrap();
        assert_eq!(l.compute_us, 18_432.0);
        assert_eq!(l.dram_us, 7_296.0);
        assert_eq!(l.bus_us, 768.0);
        assert_eq!(l.latency_us, 18_432.0);
        assert_eq!(l.bound, Bound::Compute);

        let l = estimate_layer(&conv(1, 4), TensorShape::new(64, 64, 4), &cfg).unwrap();
        assert_eq!(l.compute_us, 4_096.0);
        assert_eq!(l.dram_us, 32_784.0);
        assert_eq!(l.bound, Bound::Dram);
    }

    #[test]
    fn infinite_bandwidth_degenerates_to_compute() {
        let cfg = AcceleratorConfig {
            dram_bw: f64::INFINITY,
            onchip_bus_bw: f64::INFINITY,
            ..AcceleratorConfig::toy()
        };
        let l = estimate_layer(&conv(1, 4), TensorShape::new(64, 64, 4), &cfg).unwrap();
        assert_eq!(l.latency_us, l.compute_us);
        assert_eq!(l.bound, Bound::Compute);
    }

    #[test]
    fn tie_break_order() {
        assert_eq!(Bound::of(1.0, 1.0, 1.0), Bound::Compute);
        assert_eq!(Bound::of(0.5, 1.0, 1.0), Bound::Dram);
        assert_eq!(Bound::of(0.5, 0.7, 1.0), Bound::Bus);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AcceleratorConfig::toy();
        cfg.clock_hz = 0.0;
        assert_eq!(cfg.validate(), Err(ConfigError::NonPositive("clock_hz")));
        let mut cfg = AcceleratorConfig::toy();
        cfg.onchip_bus_bw = 1.0;
        assert!(matches!(cfg.validate(), Err(ConfigError::BusSlowerThanDram { .. })));
        let mut cfg = AcceleratorConfig::toy();
        cfg.dram_bw = f64::NAN;
        assert!(cfg.validate().is_err());
        assert!(matches!(
            estimate_layer(&conv(3, 4), TensorShape::new(4, 4, 4), &AcceleratorConfig {
                array_rows: 0,
                ..AcceleratorConfig::toy()
            }),
            Err(EstimateError::Config(_))
        ));
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = AcceleratorConfig::edgetpu_like();
        assert_eq!(AcceleratorConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let text = "array_rows = 4\narray_cols = 4\nclock_hz = 1e6\ndram_bw = 1e6\n\
                    onchip_bus_bw = 8e6\nbuffer_bytes = 1024\n";
        assert_eq!(AcceleratorConfig::from_toml(text).unwrap().bytes_per_element, 1.0);
        assert!(AcceleratorConfig::from_toml(&format!("{text}rogue = 1\n")).is_err());
    }

    #[test]
    fn empty_graph_is_a_validation_error() {
        let g = ModelGraph::new("e", TensorShape::new(8, 8, 3), vec![]);
        assert!(matches!(
            estimate_model(&g, &AcceleratorConfig::toy()),
            Err(EstimateError::Validation(_))
        ));
    }

    #[test]
    fn single_layer_total() {
        let cfg = AcceleratorConfig::toy();
        let g = ModelGraph::new("one", TensorShape::new(16, 16, 8), vec![conv(3, 16)]);
        let b = estimate_model(&g, &cfg).unwrap();
        assert_eq!(b.total_us, b.per_layer[0].latency_us);
        assert_eq!(b.macs, 294_912);
        assert_eq!(b.params, 1_152);
    }
}
