//! Estimator-agreement and block-crossover studies.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::accel::{estimate_layer, estimate_model, AcceleratorConfig, Bound};
use crate::estimator::Estimator;
use crate::ir::{LayerSpec, ModelGraph, TensorShape};
use crate::sim::{cycles_to_us, simulate_layer, simulate_model};
use crate::space::{decode, sample_with, ArchGenome, GenomeError, Skeleton};
use crate::EstimateError;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sweep grid is empty")]
    EmptySweep,
    #[error("bad block spec {0:?}: expected ibn|fused_ibn|conv|dwconv with optional :k3/:k5")]
    BlockSpec(String),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / a.len() as f64).sqrt()
}

/// 1-based ranks, ties get the mean of the ranks they span.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either side has no spread.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyPoint {
    pub genome: String,
    pub macs: u64,
    pub apm_us: f64,
    pub sim_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub points: Vec<StudyPoint>,
    pub rmse: f64,
    pub spearman: Option<f64>,
    /// Simulator wall time over analytical-model wall time.
    pub speedup: f64,
    pub apm_seconds: f64,
    pub sim_seconds: f64,
}

impl StudyReport {
    pub fn spearman_text(&self) -> String {
        self.spearman
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "n/a".into())
    }
}

/// Samples `n` genomes and estimates each with both the analytical model and
/// the simulator. Each estimator is timed over the whole batch; decoding is
/// not timed.
pub fn rmse_study(
    n: usize,
    seed: u64,
    skeleton: &Skeleton,
    cfg: &AcceleratorConfig,
) -> Result<StudyReport, StudyError> {
    if n < 2 {
        return Err(StudyError::TooFewSamples(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genomes: Vec<ArchGenome> = (0..n).map(|_| sample_with(skeleton, &mut rng)).collect();
    let graphs = genomes
        .iter()
        .map(|g| decode(g, skeleton))
        .collect::<Result<Vec<_>, _>>()?;
    study_graphs(&genomes, &graphs, cfg)
}

pub fn study_graphs(
    genomes: &[ArchGenome],
    graphs: &[ModelGraph],
    cfg: &AcceleratorConfig,
) -> Result<StudyReport, StudyError> {
    if graphs.len() < 2 {
        return Err(StudyError::TooFewSamples(graphs.len()));
    }
    let start = Instant::now();
    let apm = graphs
        .iter()
        .map(|g| estimate_model(g, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let apm_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let sim = graphs
        .iter()
        .map(|g| simulate_model(g, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let sim_seconds = start.elapsed().as_secs_f64();

    let apm_us: Vec<f64> = apm.iter().map(|b| b.total_us).collect();
    let sim_us: Vec<f64> = sim.iter().map(|r| r.total_us).collect();
    let points = genomes
        .iter()
        .zip(&apm)
        .zip(&sim_us)
        .map(|((g, a), s)| StudyPoint {
            genome: g.to_json(),
            macs: a.macs,
            apm_us: a.total_us,
            sim_us: *s,
        })
        .collect();
    Ok(StudyReport {
        points,
        rmse: rmse(&apm_us, &sim_us),
        spearman: spearman(&apm_us, &sim_us),
        speedup: sim_seconds / apm_seconds.max(f64::MIN_POSITIVE),
        apm_seconds,
        sim_seconds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Conv,
    Depthwise,
    Ibn,
    FusedIbn,
}

/// A block family to place at every sweep cell, e.g. `fused_ibn:k5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub kernel: u32,
}

impl BlockSpec {
    pub fn layer(&self, out_channels: u32, expansion: u32, stride: u32) -> LayerSpec {
        let kernel = self.kernel;
        match self.kind {
            BlockKind::Conv => LayerSpec::Conv2D {
                kernel,
                stride,
                out_channels,
            },
            BlockKind::Depthwise => LayerSpec::DepthwiseConv { kernel, stride },
            BlockKind::Ibn => LayerSpec::Ibn {
                kernel,
                stride,
                expansion,
                out_channels,
                residual: false,
            },
            BlockKind::FusedIbn => LayerSpec::FusedIbn {
                kernel,
                stride,
                expansion,
                out_channels,
                residual: false,
            },
        }
    }
}

impl FromStr for BlockSpec {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StudyError::BlockSpec(s.to_owned());
        let (kind, kernel) = match s.split_once(':') {
            Some((kind, k)) => (kind, k.strip_prefix('k').ok_or_else(bad)?.parse().map_err(|_| bad())?),
            None => (s, 3),
        };
        let kind = match kind {
            "conv" | "conv2d" => BlockKind::Conv,
            "dwconv" => BlockKind::Depthwise,
            "ibn" => BlockKind::Ibn,
            "fused_ibn" => BlockKind::FusedIbn,
            _ => return Err(bad()),
        };
        let allowed: &[u32] = if kind == BlockKind::Conv { &[1, 3, 5] } else { &[3, 5] };
        if !allowed.contains(&kernel) {
            return Err(bad());
        }
        Ok(Self { kind, kernel })
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            BlockKind::Conv => "conv",
            BlockKind::Depthwise => "dwconv",
            BlockKind::Ibn => "ibn",
            BlockKind::FusedIbn => "fused_ibn",
        };
        write!(f, "{kind}:k{}", self.kernel)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepGrid {
    /// Square spatial sizes.
    pub hw: Vec<u32>,
    pub cin: Vec<u32>,
    pub cout: Vec<u32>,
    pub expansion: Vec<u32>,
    pub stride: u32,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            hw: vec![7, 14, 28, 56, 112],
            cin: vec![2, 4, 8, 16, 32, 64, 128, 256],
            cout: vec![16, 64, 256],
            expansion: vec![1, 3, 6],
            stride: 1,
        }
    }
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.hw.is_empty() || self.cin.is_empty() || self.cout.is_empty() || self.expansion.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossoverCell {
    pub hw: u32,
    pub cin: u32,
    pub cout: u32,
    pub expansion: u32,
    pub macs_a: u64,
    pub macs_b: u64,
    pub latency_a_us: f64,
    pub latency_b_us: f64,
    pub ratio: f64,
    pub bound_a: Bound,
    pub bound_b: Bound,
}

/// Latency and binding ceiling of a single layer under either estimator.
pub fn layer_latency(
    layer: &LayerSpec,
    input: TensorShape,
    cfg: &AcceleratorConfig,
    estimator: Estimator,
) -> Result<(f64, Bound), EstimateError> {
    match estimator {
        Estimator::Apm => estimate_layer(layer, input, cfg).map(|l| (l.latency_us, l.bound)),
        Estimator::Sim => {
            cfg.validate()?;
            let s = simulate_layer(layer, input, cfg)?;
            let bound = if s.compute_cycles >= s.dma_cycles {
                Bound::Compute
            } else {
                Bound::Dram
            };
            Ok((cycles_to_us(s.cycles, cfg), bound))
        }
    }
}

/// `latency(a) / latency(b)` over every cell of the grid. Cells iterate with
/// `hw` outermost and `expansion` innermost.
pub fn crossover(
    a: BlockSpec,
    b: BlockSpec,
    grid: &SweepGrid,
    cfg: &AcceleratorConfig,
    estimator: Estimator,
) -> Result<Vec<CrossoverCell>, StudyError> {
    if grid.is_empty() {
        return Err(StudyError::EmptySweep);
    }
    let mut cells = Vec::new();
    for &hw in &grid.hw {
        for &cin in &grid.cin {
            for &cout in &grid.cout {
                for &expansion in &grid.expansion {
                    let input = TensorShape::new(hw, hw, cin);
                    let la = a.layer(cout, expansion, grid.stride);
                    let lb = b.layer(cout, expansion, grid.stride);
                    let (latency_a_us, bound_a) = layer_latency(&la, input, cfg, estimator)?;
                    let (latency_b_us, bound_b) = layer_latency(&lb, input, cfg, estimator)?;
                    cells.push(CrossoverCell {
                        hw,
                        cin,
                        cout,
                        expansion,
                        macs_a: la.cost(input).map_err(EstimateError::from)?.macs,
                        macs_b: lb.cost(input).map_err(EstimateError::from)?.macs,
                        latency_a_us,
                        latency_b_us,
                        ratio: latency_a_us / latency_b_us,
                        bound_a,
                        bound_b,
                    });
                }
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&a, &a), Some(1.0));
        assert_eq!(spearman(&a, &[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&a, &[10.0, 20.0, 30.0, 40.0]), Some(1.0));
        assert_eq!(spearman(&[5.0, 5.0], &[5.0, 5.0]), None);
        assert_eq!(rmse(&[5.0, 5.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn spearman_matches_textbook_formula_without_ties() {
        // rho = 1 - 6 sum d^2 / (n (n^2 - 1))
        let a = [3.1, 1.2, 5.5, 4.0, 2.2, 9.0];
        let b = [2.0, 1.0, 4.0, 6.0, 3.0, 5.0];
        let (ra, rb) = (ranks(&a), ranks(&b));
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        let n = a.len() as f64;
        let expected = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!((spearman(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn rmse_value() {
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn block_spec_parsing() {
        let b: BlockSpec = "fused_ibn:k5".parse().unwrap();
        assert_eq!(b, BlockSpec { kind: BlockKind::FusedIbn, kernel: 5 });
        assert_eq!("ibn".parse::<BlockSpec>().unwrap().kernel, 3);
        assert_eq!(b.to_string().parse::<BlockSpec>().unwrap(), b);
        assert!("ibn:k7".parse::<BlockSpec>().is_err());
        assert!("se".parse::<BlockSpec>().is_err());
        assert!("conv:5".parse::<BlockSpec>().is_err());
    }

    #[test]
    fn self_sweep_is_all_ones() {
        let grid = SweepGrid {
            hw: vec![7, 14],
            cin: vec![8, 32],
            cout: vec![16],
            expansion: vec![1, 6],
            stride: 1,
        };
        let b: BlockSpec = "ibn:k3".parse().unwrap();
        for est in [Estimator::Apm, Estimator::Sim] {
            let cells = crossover(b, b, &grid, &AcceleratorConfig::edgetpu_like(), est).unwrap();
            assert_eq!(cells.len(), 8);
            assert!(cells.iter().all(|c| c.ratio == 1.0));
        }
    }

    #[test]
    fn empty_sweep() {
        let grid = SweepGrid {
            cin: vec![],
            ..SweepGrid::default()
        };
        let b: BlockSpec = "ibn".parse().unwrap();
        assert!(matches!(
            crossover(b, b, &grid, &AcceleratorConfig::toy(), Estimator::Apm),
            Err(StudyError::EmptySweep)
        ));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            rmse_study(1, 0, &Skeleton::default(), &AcceleratorConfig::edgetpu_like()),
            Err(StudyError::TooFewSamples(1))
        ));
    }
}
