//! Cycle-approximate simulator of a weight-stationary systolic array fed by a
//! double-buffered DMA engine.
//!
//! Each primitive op is tiled over its output (rows, cols, channels) so a tile
//! fits in half of the on-chip buffer. Within a tile the array runs one pass
//! per (output-channel fold, contraction fold) pair and streams one input
//! vector per cycle. DMA for the tile overlaps compute perfectly, so a tile
//! lasts `max(compute, dma)` cycles. The array pipeline (depth `R + C - 1`)
//! keeps flowing across passes and tiles and drains once at the end of the op.

use serde::{Deserialize, Serialize};

use crate::accel::AcceleratorConfig;
use crate::ir::{validate, LayerSpec, ModelGraph, PrimOp, TensorShape};
use crate::EstimateError;

/// Nominal output-tile extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileDims {
    pub rows: u32,
    pub cols: u32,
    pub channels: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWork {
    pub compute_cycles: u64,
    pub dma_cycles: u64,
    pub dma_bytes: u64,
}

impl TileWork {
    pub fn cycles(&self) -> u64 {
        self.compute_cycles.max(self.dma_cycles)
    }
}

/// Tiling of one primitive op.
#[derive(Clone, Debug, PartialEq)]
pub struct TileSchedule {
    pub op: PrimOp,
    pub tile: TileDims,
    /// Bytes of the nominal (largest) tile; at most half the buffer.
    pub tile_bytes: u64,
    pub tiles: Vec<TileWork>,
}

impl TileSchedule {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn compute_cycles(&self) -> u64 {
        self.tiles.iter().map(|t| t.compute_cycles).sum()
    }

    pub fn dma_cycles(&self) -> u64 {
        self.tiles.iter().map(|t| t.dma_cycles).sum()
    }
}

/// Simulated cost of one graph layer, summed over its primitive ops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSim {
    /// Tile cycles plus pipeline fill.
    pub cycles: u64,
    pub compute_cycles: u64,
    pub dma_cycles: u64,
    pub fill_cycles: u64,
    pub tiles: u64,
    /// Input vectors that left the array; equals the sum of all passes.
    pub vectors: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: u64,
    pub total_us: f64,
    pub per_layer: Vec<LayerSim>,
}

pub fn fill_cycles(cfg: &AcceleratorConfig) -> u64 {
    cfg.array_rows as u64 + cfg.array_cols as u64 - 2
}

/// Rows of a "same"-padded input touched by outputs `[start, start + len)`.
fn input_span(in_dim: u32, out_dim: u32, kernel: u32, stride: u32, start: u32, len: u32) -> u64 {
    let total_pad = ((out_dim as i64 - 1) * stride as i64 + kernel as i64 - in_dim as i64).max(0);
    let pad_before = total_pad / 2;
    let lo = start as i64 * stride as i64 - pad_before;
    let hi = (start + len - 1) as i64 * stride as i64 - pad_before + kernel as i64;
    (hi.min(in_dim as i64) - lo.max(0)).max(0) as u64
}

/// Element counts (input, weights, output) of a tile starting at the given
/// output coordinates.
fn tile_elements(op: &PrimOp, row: u32, col: u32, dims: TileDims) -> (u64, u64, u64) {
    let input = op.input();
    let output = op.output();
    let k = op.kernel();
    let positions = dims.rows as u64 * dims.cols as u64;
    match *op {
        PrimOp::Pool { .. } => (input.spatial() * dims.channels as u64, 0, dims.channels as u64),
        PrimOp::Conv { stride, .. } => {
            let rows = input_span(input.height, output.height, k, stride, row, dims.rows);
            let cols = input_span(input.width, output.width, k, stride, col, dims.cols);
            (
                rows * cols * input.channels as u64,
                (k * k) as u64 * input.channels as u64 * dims.channels as u64,
                positions * dims.channels as u64,
            )
        }
        PrimOp::Depthwise { stride, .. } => {
            let rows = input_span(input.height, output.height, k, stride, row, dims.rows);
            let cols = input_span(input.width, output.width, k, stride, col, dims.cols);
            (
                rows * cols * dims.channels as u64,
                (k * k) as u64 * dims.channels as u64,
                positions * dims.channels as u64,
            )
        }
    }
}

fn to_bytes(elements: u64, cfg: &AcceleratorConfig) -> u64 {
    (elements as f64 * cfg.bytes_per_element).ceil() as u64
}

/// Weight-stationary passes needed to cover `channels` output channels.
fn passes(op: &PrimOp, channels: u32, cfg: &AcceleratorConfig) -> u64 {
    let channel_folds = (channels as u64).div_ceil(cfg.array_cols as u64);
    match op {
        PrimOp::Conv { .. } => channel_folds * op.contraction_depth().div_ceil(cfg.array_rows as u64),
        // One contraction row active, one pass per tap.
        PrimOp::Depthwise { kernel, .. } => channel_folds * (*kernel as u64 * *kernel as u64),
        PrimOp::Pool { .. } => 0,
    }
}

/// Next tile extent when halving: stays on power-of-two boundaries so every
/// finer tiling nests inside the coarser one.
fn halve(extent: u32) -> u32 {
    extent.div_ceil(2).next_power_of_two().min(extent.max(1))
}

/// Greedy largest-fit tiling: start from the whole output and halve the
/// largest tile dimension until a tile fits in half the buffer.
pub fn plan_op(op: &PrimOp, cfg: &AcceleratorConfig) -> Result<TileSchedule, EstimateError> {
    let out = op.output();
    let budget = cfg.buffer_bytes / 2;
    let mut dims = TileDims {
        rows: out.height,
        cols: out.width,
        channels: out.channels,
    };
    let nominal_bytes = |dims: TileDims| {
        let (i, w, o) = tile_elements(op, 0, 0, dims);
        to_bytes(i + w + o, cfg)
    };
    loop {
        let bytes = nominal_bytes(dims);
        if bytes <= budget {
            break;
        }
        if dims.rows == 1 && dims.cols == 1 && dims.channels == 1 {
            return Err(EstimateError::InfeasibleTile {
                required: bytes,
                available: budget,
            });
        }
        if dims.rows >= dims.cols && dims.rows >= dims.channels {
            dims.rows = halve(dims.rows);
        } else if dims.cols >= dims.channels {
            dims.cols = halve(dims.cols);
        } else {
            dims.channels = halve(dims.channels);
        }
    }

    let bytes_per_cycle = cfg.dram_bw / cfg.clock_hz;
    let mut tiles = Vec::new();
    for row in (0..out.height).step_by(dims.rows as usize) {
        let rows = dims.rows.min(out.height - row);
        for col in (0..out.width).step_by(dims.cols as usize) {
            let cols = dims.cols.min(out.width - col);
            for ch in (0..out.channels).step_by(dims.channels as usize) {
                let channels = dims.channels.min(out.channels - ch);
                let this = TileDims {
                    rows,
                    cols,
                    channels,
                };
                let (i, w, o) = tile_elements(op, row, col, this);
                let dma_bytes = to_bytes(i + w + o, cfg);
                let positions = rows as u64 * cols as u64;
                tiles.push(TileWork {
                    compute_cycles: positions * passes(op, channels, cfg),
                    dma_cycles: (dma_bytes as f64 / bytes_per_cycle).ceil() as u64,
                    dma_bytes,
                });
            }
        }
    }
    Ok(TileSchedule {
        op: *op,
        tile: dims,
        tile_bytes: nominal_bytes(dims),
        tiles,
    })
}

/// Tile schedules for every primitive op of `layer`, in execution order.
pub fn plan_tiles(
    layer: &LayerSpec,
    input: TensorShape,
    cfg: &AcceleratorConfig,
) -> Result<Vec<TileSchedule>, EstimateError> {
    cfg.validate()?;
    layer.lower(input)?.iter().map(|op| plan_op(op, cfg)).collect()
}

/// Occupancy of the array's skewed wavefront pipeline. Every cycle one slot
/// enters (a real input vector or a bubble) and the oldest slot leaves.
struct Pipeline {
    slots: Vec<bool>,
    head: usize,
    retired: u64,
}

impl Pipeline {
    fn new(cfg: &AcceleratorConfig) -> Self {
        Self {
            slots: vec![false; (cfg.array_rows + cfg.array_cols - 1) as usize],
            head: 0,
            retired: 0,
        }
    }

    fn tick(&mut self, vector: bool) {
        let leaving = std::mem::replace(&mut self.slots[self.head], vector);
        self.retired += leaving as u64;
        self.head += 1;
        if self.head == self.slots.len() {
            self.head = 0;
        }
    }

    /// Drains every in-flight vector; returns the cycles spent.
    fn drain(&mut self) -> u64 {
        let depth = self.slots.len() as u64 - 1;
        for _ in 0..self.slots.len() {
            self.tick(false);
        }
        depth
    }
}

fn run_schedule(schedule: &TileSchedule, cfg: &AcceleratorConfig) -> LayerSim {
    let mut pipe = Pipeline::new(cfg);
    let mut sim = LayerSim::default();
    for tile in &schedule.tiles {
        // The DMA engine prefetched this tile while the previous one computed;
        // the tile ends once both engines are done.
        let span = tile.cycles();
        for cycle in 0..span {
            pipe.tick(cycle < tile.compute_cycles);
        }
        sim.cycles += span;
        sim.compute_cycles += tile.compute_cycles;
        sim.dma_cycles += tile.dma_cycles;
        sim.tiles += 1;
    }
    let fill = pipe.drain();
    debug_assert_eq!(fill, fill_cycles(cfg));
    sim.cycles += fill;
    sim.fill_cycles = fill;
    sim.vectors = pipe.retired;
    sim
}

fn add(a: LayerSim, b: LayerSim) -> LayerSim {
    LayerSim {
        cycles: a.cycles + b.cycles,
        compute_cycles: a.compute_cycles + b.compute_cycles,
        dma_cycles: a.dma_cycles + b.dma_cycles,
        fill_cycles: a.fill_cycles + b.fill_cycles,
        tiles: a.tiles + b.tiles,
        vectors: a.vectors + b.vectors,
    }
}

pub fn simulate_layer(
    layer: &LayerSpec,
    input: TensorShape,
    cfg: &AcceleratorConfig,
) -> Result<LayerSim, EstimateError> {
    Ok(plan_tiles(layer, input, cfg)?
        .iter()
        .map(|s| run_schedule(s, cfg))
        .fold(LayerSim::default(), add))
}

pub fn simulate_model(graph: &ModelGraph, cfg: &AcceleratorConfig) -> Result<SimReport, EstimateError> {
    cfg.validate()?;
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(EstimateError::Validation(violations));
    }
    let mut shape = graph.input;
    let mut per_layer = Vec::with_capacity(graph.layers.len());
    for layer in &graph.layers {
        per_layer.push(simulate_layer(layer, shape, cfg)?);
        shape = layer.output_shape(shape)?;
    }
    let total_cycles = per_layer.iter().map(|l| l.cycles).sum();
    Ok(SimReport {
        total_cycles,
        total_us: cycles_to_us(total_cycles, cfg),
        per_layer,
    })
}

pub fn cycles_to_us(cycles: u64, cfg: &AcceleratorConfig) -> f64 {
    cycles as f64 / cfg.clock_hz * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(kernel: u32, stride: u32, out_channels: u32) -> LayerSpec {
        LayerSpec::Conv2D {
            kernel,
            stride,
            out_channels,
        }
    }

    #[test]
    fn toy_conv_single_tile() {
        let cfg = AcceleratorConfig::toy();
        let s = simulate_layer(&conv(3, 1, 16), TensorShape::new(16, 16, 8), &cfg).unwrap();
        assert_eq!(s.tiles, 1);
        assert_eq!(s.cycles, 256 * 4 * 18 + 6);
        assert_eq!(s.dma_cycles, 7_296);
        assert_eq!(s.vectors, 256 * 4 * 18);
    }

    #[test]
    fn toy_depthwise_single_tile() {
        let cfg = AcceleratorConfig::toy();
        let dw = LayerSpec::DepthwiseConv { kernel: 3, stride: 1 };
        let s = simulate_layer(&dw, TensorShape::new(16, 16, 32), &cfg).unwrap();
        assert_eq!(s.cycles, 256 * 8 * 9 + 6);
    }

    #[test]
    fn infinite_bandwidth_is_compute_plus_fill() {
        let cfg = AcceleratorConfig {
            dram_bw: f64::INFINITY,
            onchip_bus_bw: f64::INFINITY,
            ..AcceleratorConfig::toy()
        };
        let s = simulate_layer(&conv(1, 1, 4), TensorShape::new(64, 64, 4), &cfg).unwrap();
        assert_eq!(s.dma_cycles, 0);
        assert_eq!(s.cycles, s.compute_cycles + 6);
    }

    #[test]
    fn fitting_layer_is_one_tile() {
        let cfg = AcceleratorConfig::toy();
        let plan = plan_tiles(&conv(3, 1, 16), TensorShape::new(16, 16, 8), &cfg).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].tile_count(), 1);
        assert_eq!(plan[0].tile_bytes, 7_296);
    }

    #[test]
    fn one_halving_gives_two_tiles() {
        // 16x16x8 -> 16x16x16, k3: the whole layer is 2048 + 1152 + 4096 = 7296
        // bytes. Halving rows gives a 9x16x8 input window, 8x16x16 outputs and
        // all weights: 1152 + 1152 + 2048 = 4352 bytes.
        let layer = conv(3, 1, 16);
        let input = TensorShape::new(16, 16, 8);
        let cfg = AcceleratorConfig {
            buffer_bytes: 2 * 4_352,
            ..AcceleratorConfig::toy()
        };
        let plan = plan_tiles(&layer, input, &cfg).unwrap();
        assert_eq!(plan[0].tile, TileDims { rows: 8, cols: 16, channels: 16 });
        assert_eq!(plan[0].tile_count(), 2);
        assert_eq!(plan[0].tile_bytes, 4_352);

        let cfg = AcceleratorConfig {
            buffer_bytes: 2 * 4_352 - 1,
            ..cfg
        };
        assert!(plan_tiles(&layer, input, &cfg).unwrap()[0].tile_count() > 2);
    }

    #[test]
    fn tiny_buffer_is_infeasible() {
        let cfg = AcceleratorConfig {
            buffer_bytes: 1,
            ..AcceleratorConfig::toy()
        };
        assert!(matches!(
            plan_tiles(&conv(3, 1, 16), TensorShape::new(16, 16, 8), &cfg),
            Err(EstimateError::InfeasibleTile { .. })
        ));
    }

    #[test]
    fn halving_stays_nested() {
        assert_eq!(halve(7), 4);
        assert_eq!(halve(6), 4);
        assert_eq!(halve(5), 4);
        assert_eq!(halve(4), 2);
        assert_eq!(halve(3), 2);
        assert_eq!(halve(2), 1);
        assert_eq!(halve(1), 1);
    }

    #[test]
    fn input_span_covers_padding() {
        // 16 outputs, k3 s1 same: one pixel of padding each side.
        assert_eq!(input_span(16, 16, 3, 1, 0, 16), 16);
        assert_eq!(input_span(16, 16, 3, 1, 0, 8), 9);
        assert_eq!(input_span(16, 16, 3, 1, 8, 8), 9);
        // 15 -> 8 with stride 2, k3: total pad 2.
        assert_eq!(input_span(15, 8, 3, 2, 0, 8), 15);
        assert_eq!(input_span(15, 8, 3, 2, 0, 4), 8);
    }

    #[test]
    fn stacked_layers_are_additive() {
        let cfg = AcceleratorConfig::toy();
        let layer = conv(3, 1, 8);
        let input = TensorShape::new(8, 8, 8);
        let one = simulate_layer(&layer, input, &cfg).unwrap();
        let g = ModelGraph::new("two", input, vec![layer, layer]);
        let r = simulate_model(&g, &cfg).unwrap();
        assert_eq!(r.total_cycles, 2 * one.cycles);
        assert_eq!(r.per_layer.iter().map(|l| l.fill_cycles).sum::<u64>(), 12);
        assert_eq!(r.total_us, r.total_cycles as f64);
    }
}
