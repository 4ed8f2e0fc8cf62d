//! Typed intermediate representation for linear-chain convolutional models.
//!
//! A [`ModelGraph`] is an input shape plus an ordered list of [`LayerSpec`]s.
//! All spatial arithmetic uses "same" padding, so a layer with stride `s` maps
//! an `H x W` input to `ceil(H/s) x ceil(W/s)`. Composite blocks (inverted
//! bottlenecks) are lowered into [`PrimOp`]s, which is the form the cost model
//! and the simulator consume.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Op tags accepted in the canonical model file.
pub const SUPPORTED_OPS: [&str; 6] = ["conv2d", "dwconv", "ibn", "fused_ibn", "gap", "dense"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorShape {
    #[serde(rename = "h")]
    pub height: u32,
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "c")]
    pub channels: u32,
}

impl TensorShape {
    pub const fn new(height: u32, width: u32, channels: u32) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn elements(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.channels as u64
    }

    pub fn spatial(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    pub fn is_valid(&self) -> bool {
        self.height >= 1 && self.width >= 1 && self.channels >= 1
    }

    fn strided(&self, stride: u32, channels: u32) -> Self {
        Self::new(
            self.height.div_ceil(stride),
            self.width.div_ceil(stride),
            channels,
        )
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// One layer of a model. The variant set is closed: anything else is rejected
/// when a model file is parsed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum LayerSpec {
    #[serde(rename = "conv2d")]
    Conv2D {
        kernel: u32,
        stride: u32,
        out_channels: u32,
    },
    #[serde(rename = "dwconv")]
    DepthwiseConv { kernel: u32, stride: u32 },
    /// 1x1 expand, kxk depthwise, 1x1 project.
    #[serde(rename = "ibn")]
    Ibn {
        kernel: u32,
        stride: u32,
        expansion: u32,
        out_channels: u32,
        #[serde(default)]
        residual: bool,
    },
    /// Expand and depthwise fused into one full kxk convolution, then 1x1 project.
    #[serde(rename = "fused_ibn")]
    FusedIbn {
        kernel: u32,
        stride: u32,
        expansion: u32,
        out_channels: u32,
        #[serde(default)]
        residual: bool,
    },
    #[serde(rename = "gap")]
    GlobalAvgPool,
    #[serde(rename = "dense")]
    Dense { units: u32 },
}

impl LayerSpec {
    pub fn op_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "conv2d",
            LayerSpec::DepthwiseConv { .. } => "dwconv",
            LayerSpec::Ibn { .. } => "ibn",
            LayerSpec::FusedIbn { .. } => "fused_ibn",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn stride(&self) -> u32 {
        match *self {
            LayerSpec::Conv2D { stride, .. }
            | LayerSpec::DepthwiseConv { stride, .. }
            | LayerSpec::Ibn { stride, .. }
            | LayerSpec::FusedIbn { stride, .. } => stride,
            LayerSpec::GlobalAvgPool | LayerSpec::Dense { .. } => 1,
        }
    }

    pub fn residual(&self) -> bool {
        match *self {
            LayerSpec::Ibn { residual, .. } | LayerSpec::FusedIbn { residual, .. } => residual,
            _ => false,
        }
    }

    /// Output shape for `input`, checking the shape constraints of the variant.
    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape, ShapeError> {
        if !input.is_valid() {
            return Err(ShapeError::new(format!("input shape {input} has a zero dimension")));
        }
        let stride = self.stride();
        if stride == 0 {
            return Err(ShapeError::new("stride must be positive"));
        }
        if stride > 1 && (input.height < stride || input.width < stride) {
            return Err(ShapeError::new(format!(
                "stride {stride} needs spatial dims >= {stride}, got {input}"
            )));
        }
        let out = match *self {
            LayerSpec::Conv2D { out_channels, .. }
            | LayerSpec::Ibn { out_channels, .. }
            | LayerSpec::FusedIbn { out_channels, .. } => input.strided(stride, out_channels),
            LayerSpec::DepthwiseConv { .. } => input.strided(stride, input.channels),
            LayerSpec::GlobalAvgPool => TensorShape::new(1, 1, input.channels),
            LayerSpec::Dense { units } => {
                if input.height != 1 || input.width != 1 {
                    return Err(ShapeError::new(format!(
                        "dense needs a 1x1 spatial input, got {input}"
                    )));
                }
                TensorShape::new(1, 1, units)
            }
        };
        if !out.is_valid() {
            return Err(ShapeError::new(format!("output shape {out} has a zero dimension")));
        }
        Ok(out)
    }

    /// Lowers the layer into the primitive ops that execute it, in order.
    pub fn lower(&self, input: TensorShape) -> Result<Vec<PrimOp>, ShapeError> {
        let out = self.output_shape(input)?;
        let ops = match *self {
            LayerSpec::Conv2D {
                kernel,
                stride,
                out_channels,
            } => vec![PrimOp::Conv {
                kernel,
                stride,
                input,
                out_channels,
            }],
            LayerSpec::DepthwiseConv { kernel, stride } => {
                vec![PrimOp::Depthwise {
                    kernel,
                    stride,
                    input,
                }]
            }
            LayerSpec::Ibn {
                kernel,
                stride,
                expansion,
                out_channels,
                ..
            } => {
                let wide = input.channels * expansion;
                let expanded = TensorShape::new(input.height, input.width, wide);
                vec![
                    PrimOp::Conv {
                        kernel: 1,
                        stride: 1,
                        input,
                        out_channels: wide,
                    },
                    PrimOp::Depthwise {
                        kernel,
                        stride,
                        input: expanded,
                    },
                    PrimOp::Conv {
                        kernel: 1,
                        stride: 1,
                        input: TensorShape::new(out.height, out.width, wide),
                        out_channels,
                    },
                ]
            }
            LayerSpec::FusedIbn {
                kernel,
                stride,
                expansion,
                out_channels,
                ..
            } => {
                let wide = input.channels * expansion;
                vec![
                    PrimOp::Conv {
                        kernel,
                        stride,
                        input,
                        out_channels: wide,
                    },
                    PrimOp::Conv {
                        kernel: 1,
                        stride: 1,
                        input: TensorShape::new(out.height, out.width, wide),
                        out_channels,
                    },
                ]
            }
            LayerSpec::GlobalAvgPool => vec![PrimOp::Pool { input }],
            LayerSpec::Dense { units } => vec![PrimOp::Conv {
                kernel: 1,
                stride: 1,
                input,
                out_channels: units,
            }],
        };
        Ok(ops)
    }

    pub fn cost(&self, input: TensorShape) -> Result<LayerCost, ShapeError> {
        let ops = self.lower(input)?;
        Ok(LayerCost {
            macs: ops.iter().map(PrimOp::macs).sum(),
            params: ops.iter().map(PrimOp::params).sum(),
        })
    }
}

/// A primitive op with its input shape resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimOp {
    /// Full convolution (1x1 and dense included): reduces over `kernel^2 * Cin`.
    Conv {
        kernel: u32,
        stride: u32,
        input: TensorShape,
        out_channels: u32,
    },
    /// Per-channel spatial convolution with no cross-channel reduction.
    Depthwise {
        kernel: u32,
        stride: u32,
        input: TensorShape,
    },
    /// Global average pooling. No MACs, no weights.
    Pool { input: TensorShape },
}

impl PrimOp {
    pub fn input(&self) -> TensorShape {
        match *self {
            PrimOp::Conv { input, .. } | PrimOp::Depthwise { input, .. } | PrimOp::Pool { input } => {
                input
            }
        }
    }

    pub fn kernel(&self) -> u32 {
        match *self {
            PrimOp::Conv { kernel, .. } | PrimOp::Depthwise { kernel, .. } => kernel,
            PrimOp::Pool { .. } => 1,
        }
    }

    pub fn stride(&self) -> u32 {
        match *self {
            PrimOp::Conv { stride, .. } | PrimOp::Depthwise { stride, .. } => stride,
            PrimOp::Pool { .. } => 1,
        }
    }

    pub fn output(&self) -> TensorShape {
        match *self {
            PrimOp::Conv {
                stride,
                input,
                out_channels,
                ..
            } => input.strided(stride, out_channels),
            PrimOp::Depthwise { stride, input, .. } => input.strided(stride, input.channels),
            PrimOp::Pool { input } => TensorShape::new(1, 1, input.channels),
        }
    }

    /// Length of the reduction each output element performs.
    pub fn contraction_depth(&self) -> u64 {
        match *self {
            PrimOp::Conv { kernel, input, .. } => kernel as u64 * kernel as u64 * input.channels as u64,
            PrimOp::Depthwise { kernel, .. } => kernel as u64 * kernel as u64,
            PrimOp::Pool { input } => input.spatial(),
        }
    }

    pub fn macs(&self) -> u64 {
        match self {
            PrimOp::Pool { .. } => 0,
            _ => self.output().elements() * self.contraction_depth(),
        }
    }

    pub fn params(&self) -> u64 {
        match *self {
            PrimOp::Conv {
                kernel,
                input,
                out_channels,
                ..
            } => kernel as u64 * kernel as u64 * input.channels as u64 * out_channels as u64,
            PrimOp::Depthwise { kernel, input, .. } => {
                kernel as u64 * kernel as u64 * input.channels as u64
            }
            PrimOp::Pool { .. } => 0,
        }
    }
}

/// MAC and weight counts of one layer. Biases and batch-norm are not counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("shape error{}: {message}", .layer.map(|i| format!(" at layer {i}")).unwrap_or_default())]
pub struct ShapeError {
    pub layer: Option<usize>,
    pub message: String,
}

impl ShapeError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            layer: None,
            message: message.into(),
        }
    }

    fn at(mut self, layer: usize) -> Self {
        self.layer = Some(layer);
        self
    }
}

/// A structural problem found by [`validate`] or while parsing a model file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    UnsupportedOp { layer: usize, op: String },
    MalformedLayer { layer: usize, message: String },
    EmptyGraph,
    InvalidInput { message: String },
    InvalidKernel { layer: usize, kernel: u32 },
    InvalidStride { layer: usize, stride: u32 },
    InvalidExpansion { layer: usize, expansion: u32 },
    ZeroWidth { layer: usize },
    ResidualShapeMismatch { layer: usize },
    HeadPlacement { layer: usize, op: String },
    Shape { layer: usize, message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedOp { layer, op } => {
                write!(f, "UnsupportedOp({op:?}) at layer {layer}")
            }
            Violation::MalformedLayer { layer, message } => {
                write!(f, "MalformedLayer at layer {layer}: {message}")
            }
            Violation::EmptyGraph => write!(f, "EmptyGraph"),
            Violation::InvalidInput { message } => write!(f, "InvalidInput: {message}"),
            Violation::InvalidKernel { layer, kernel } => {
                write!(f, "InvalidKernel({kernel}) at layer {layer}")
            }
            Violation::InvalidStride { layer, stride } => {
                write!(f, "InvalidStride({stride}) at layer {layer}")
            }
            Violation::InvalidExpansion { layer, expansion } => {
                write!(f, "InvalidExpansion({expansion}) at layer {layer}")
            }
            Violation::ZeroWidth { layer } => write!(f, "ZeroWidth at layer {layer}"),
            Violation::ResidualShapeMismatch { layer } => {
                write!(f, "ResidualShapeMismatch at layer {layer}")
            }
            Violation::HeadPlacement { layer, op } => {
                write!(f, "HeadPlacement({op:?}) at layer {layer}: gap and dense must be the final two layers")
            }
            Violation::Shape { layer, message } => write!(f, "Shape at layer {layer}: {message}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    /// The document is not JSON or does not have the top-level model shape.
    #[error("malformed model file: {0}")]
    Parse(String),
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

pub fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGraph {
    pub name: String,
    pub input: TensorShape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    name: String,
    input: TensorShape,
    layers: Vec<Value>,
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, input: TensorShape, layers: Vec<LayerSpec>) -> Self {
        Self {
            name: name.into(),
            input,
            layers,
        }
    }

    /// Parses the canonical JSON form. Unknown op tags and malformed layer
    /// records come back as [`Violation`]s; structural invariants are left to
    /// [`validate`].
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ModelError> {
        let raw: RawGraph =
            serde_json::from_value(value).map_err(|e| ModelError::Parse(e.to_string()))?;
        let mut layers = Vec::with_capacity(raw.layers.len());
        let mut violations = Vec::new();
        for (layer, record) in raw.layers.into_iter().enumerate() {
            let op = record.get("op").and_then(Value::as_str).map(str::to_owned);
            match op {
                None => violations.push(Violation::MalformedLayer {
                    layer,
                    message: "missing string field \"op\"".into(),
                }),
                Some(op) if !SUPPORTED_OPS.contains(&op.as_str()) => {
                    violations.push(Violation::UnsupportedOp { layer, op })
                }
                Some(_) => match serde_json::from_value::<LayerSpec>(record) {
                    Ok(spec) => layers.push(spec),
                    Err(e) => violations.push(Violation::MalformedLayer {
                        layer,
                        message: e.to_string(),
                    }),
                },
            }
        }
        if violations.is_empty() {
            Ok(Self::new(raw.name, raw.input, layers))
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    /// Parses and validates in one step.
    pub fn from_json_validated(text: &str) -> Result<Self, ModelError> {
        let graph = Self::from_json(text)?;
        let violations = validate(&graph);
        if violations.is_empty() {
            Ok(graph)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    /// Canonical serialization: compact, fixed field order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model graphs always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model graphs always serialize")
    }

    pub fn layer_costs(&self) -> Result<Vec<LayerCost>, ShapeError> {
        infer_shapes(self)?
            .iter()
            .zip(&self.layers)
            .enumerate()
            .map(|(i, ((input, _), layer))| layer.cost(*input).map_err(|e| e.at(i)))
            .collect()
    }

    pub fn total_cost(&self) -> Result<LayerCost, ShapeError> {
        Ok(self
            .layer_costs()?
            .into_iter()
            .fold(LayerCost::default(), |acc, c| LayerCost {
                macs: acc.macs + c.macs,
                params: acc.params + c.params,
            }))
    }
}

/// Per-layer `(input, output)` shapes in graph order.
pub fn infer_shapes(graph: &ModelGraph) -> Result<Vec<(TensorShape, TensorShape)>, ShapeError> {
    if graph.layers.is_empty() {
        return Err(ShapeError::new("graph has no layers"));
    }
    let mut shape = graph.input;
    graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let out = layer.output_shape(shape).map_err(|e| e.at(i))?;
            let pair = (shape, out);
            shape = out;
            Ok(pair)
        })
        .collect()
}

pub fn count_macs(layer: &LayerSpec, input: TensorShape) -> Result<u64, ShapeError> {
    layer.cost(input).map(|c| c.macs)
}

pub fn count_params(layer: &LayerSpec, input: TensorShape) -> Result<u64, ShapeError> {
    layer.cost(input).map(|c| c.params)
}

/// Checks every structural invariant of `graph`. An empty list means valid.
pub fn validate(graph: &ModelGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    if !graph.input.is_valid() {
        out.push(Violation::InvalidInput {
            message: format!("input shape {} has a zero dimension", graph.input),
        });
    }
    if graph.layers.is_empty() {
        out.push(Violation::EmptyGraph);
        return out;
    }

    let n = graph.layers.len();
    for (layer, spec) in graph.layers.iter().enumerate() {
        check_fields(layer, spec, &mut out);
        match spec {
            LayerSpec::GlobalAvgPool => {
                let placed = layer + 1 == n
                    || (layer + 2 == n && matches!(graph.layers[n - 1], LayerSpec::Dense { .. }));
                if !placed {
                    out.push(Violation::HeadPlacement {
                        layer,
                        op: "gap".into(),
                    });
                }
            }
            LayerSpec::Dense { .. } => {
                let placed = layer + 1 == n
                    && layer >= 1
                    && matches!(graph.layers[layer - 1], LayerSpec::GlobalAvgPool);
                if !placed {
                    out.push(Violation::HeadPlacement {
                        layer,
                        op: "dense".into(),
                    });
                }
            }
            _ => {}
        }
    }
    if !out.is_empty() {
        // Shape checks assume well-formed fields.
        return out;
    }

    let mut shape = graph.input;
    for (layer, spec) in graph.layers.iter().enumerate() {
        match spec.output_shape(shape) {
            Ok(next) => {
                if spec.residual() && (spec.stride() != 1 || shape.channels != next.channels) {
                    out.push(Violation::ResidualShapeMismatch { layer });
                }
                shape = next;
            }
            Err(e) => {
                out.push(Violation::Shape {
                    layer,
                    message: e.message,
                });
                break;
            }
        }
    }
    out
}

fn check_fields(layer: usize, spec: &LayerSpec, out: &mut Vec<Violation>) {
    let allowed: &[u32] = match spec {
        LayerSpec::Conv2D { .. } => &[1, 3, 5],
        LayerSpec::DepthwiseConv { .. } | LayerSpec::Ibn { .. } | LayerSpec::FusedIbn { .. } => &[3, 5],
        LayerSpec::GlobalAvgPool | LayerSpec::Dense { .. } => &[],
    };
    if !allowed.is_empty() {
        let kernel = match *spec {
            LayerSpec::Conv2D { kernel, .. }
            | LayerSpec::DepthwiseConv { kernel, .. }
            | LayerSpec::Ibn { kernel, .. }
            | LayerSpec::FusedIbn { kernel, .. } => kernel,
            _ => unreachable!(),
        };
        if !allowed.contains(&kernel) {
            out.push(Violation::InvalidKernel { layer, kernel });
        }
        let stride = spec.stride();
        if stride != 1 && stride != 2 {
            out.push(Violation::InvalidStride { layer, stride });
        }
    }
    match *spec {
        LayerSpec::Ibn {
            expansion,
            out_channels,
            residual,
            stride,
            ..
        }
        | LayerSpec::FusedIbn {
            expansion,
            out_channels,
            residual,
            stride,
            ..
        } => {
            if ![1, 3, 6].contains(&expansion) {
                out.push(Violation::InvalidExpansion { layer, expansion });
            }
            if out_channels == 0 {
                out.push(Violation::ZeroWidth { layer });
            }
            if residual && stride != 1 {
                out.push(Violation::ResidualShapeMismatch { layer });
            }
        }
        LayerSpec::Conv2D { out_channels: 0, .. } | LayerSpec::Dense { units: 0 } => {
            out.push(Violation::ZeroWidth { layer })
        }
        _ => {}
    }
}
