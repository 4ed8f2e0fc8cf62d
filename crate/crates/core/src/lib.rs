//! Hardware-aware architecture search toolkit.
//!
//! - [`ir`]: model graphs, shape inference, MAC/parameter accounting.
//! - [`accel`]: the analytical roofline latency model.
//! - [`sim`]: the tile-level systolic-array simulator.
//! - [`space`]: the searchable block space and its genome encoding.
//! - [`surrogate`]: synthetic accuracy oracle.
//! - [`search`]: reward, random search, aging evolution, Pareto extraction.
//! - [`study`]: estimator-agreement and crossover studies.

pub mod accel;
pub mod estimator;
pub mod io;
pub mod ir;
pub mod search;
pub mod sim;
pub mod space;
pub mod study;
pub mod surrogate;
pub mod svg;
pub mod units;

use thiserror::Error;

pub use accel::{AcceleratorConfig, Bound, LatencyBreakdown, LayerLatency};
pub use ir::{LayerSpec, ModelGraph, TensorShape, Violation};
pub use sim::SimReport;
pub use space::{ArchGenome, BlockChoice, Skeleton};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Config(#[from] accel::ConfigError),
    #[error("invalid model: {}", ir::join_violations(.0))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Shape(#[from] ir::ShapeError),
    #[error("tile of {required} bytes does not fit the {available}-byte half buffer")]
    InfeasibleTile { required: u64, available: u64 },
}
