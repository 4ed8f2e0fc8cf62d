//! One interface over the analytical model and the simulator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accel::{estimate_model, AcceleratorConfig, Bound};
use crate::ir::ModelGraph;
use crate::sim::{cycles_to_us, simulate_model};
use crate::EstimateError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Apm,
    Sim,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Apm => "apm",
            Estimator::Sim => "sim",
        }
    }

    pub fn estimate(
        &self,
        graph: &ModelGraph,
        cfg: &AcceleratorConfig,
    ) -> Result<ModelEstimate, EstimateError> {
        match self {
            Estimator::Apm => {
                let b = estimate_model(graph, cfg)?;
                let per_layer = b
                    .per_layer
                    .iter()
                    .zip(&graph.layers)
                    .enumerate()
                    .map(|(i, (l, spec))| LayerEstimate {
                        name: layer_name(i, spec.op_name()),
                        latency_us: l.latency_us,
                        bound: l.bound,
                        compute_us: l.compute_us,
                        dram_us: l.dram_us,
                        bus_us: l.bus_us,
                    })
                    .collect();
                Ok(ModelEstimate {
                    total_latency_us: b.total_us,
                    per_layer,
                    macs: b.macs,
                    params: b.params,
                })
            }
            Estimator::Sim => {
                let report = simulate_model(graph, cfg)?;
                let cost = graph.total_cost()?;
                let per_layer = report
                    .per_layer
                    .iter()
                    .zip(&graph.layers)
                    .enumerate()
                    .map(|(i, (l, spec))| LayerEstimate {
                        name: layer_name(i, spec.op_name()),
                        latency_us: cycles_to_us(l.cycles, cfg),
                        bound: if l.compute_cycles >= l.dma_cycles {
                            Bound::Compute
                        } else {
                            Bound::Dram
                        },
                        compute_us: cycles_to_us(l.compute_cycles, cfg),
                        dram_us: cycles_to_us(l.dma_cycles, cfg),
                        bus_us: 0.0,
                    })
                    .collect();
                Ok(ModelEstimate {
                    total_latency_us: report.total_us,
                    per_layer,
                    macs: cost.macs,
                    params: cost.params,
                })
            }
        }
    }

    /// Total latency only.
    pub fn latency_us(&self, graph: &ModelGraph, cfg: &AcceleratorConfig) -> Result<f64, EstimateError> {
        match self {
            Estimator::Apm => estimate_model(graph, cfg).map(|b| b.total_us),
            Estimator::Sim => simulate_model(graph, cfg).map(|r| r.total_us),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "apm" => Ok(Estimator::Apm),
            "sim" => Ok(Estimator::Sim),
            other => Err(format!("unknown estimator {other:?} (expected apm or sim)")),
        }
    }
}

fn layer_name(index: usize, op: &str) -> String {
    format!("{index}:{op}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub name: String,
    pub latency_us: f64,
    pub bound: Bound,
    pub compute_us: f64,
    pub dram_us: f64,
    pub bus_us: f64,
}

/// Estimator-independent view of a whole-model estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub total_latency_us: f64,
    pub per_layer: Vec<LayerEstimate>,
    pub macs: u64,
    pub params: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{LayerSpec, TensorShape};

    #[test]
    fn both_estimators_name_layers_alike() {
        let g = ModelGraph::new(
            "m",
            TensorShape::new(16, 16, 8),
            vec![
                LayerSpec::Conv2D {
                    kernel: 3,
                    stride: 1,
                    out_channels: 16,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { units: 10 },
            ],
        );
        let cfg = AcceleratorConfig::toy();
        let a = Estimator::Apm.estimate(&g, &cfg).unwrap();
        let s = Estimator::Sim.estimate(&g, &cfg).unwrap();
        let names = |e: &ModelEstimate| e.per_layer.iter().map(|l| l.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(&a), vec!["0:conv2d", "1:gap", "2:dense"]);
        assert_eq!(names(&a), names(&s));
        assert_eq!((a.macs, a.params), (s.macs, s.params));
        assert_eq!(s.per_layer[0].latency_us, 18_438.0);
        assert_eq!(a.total_latency_us, Estimator::Apm.latency_us(&g, &cfg).unwrap());
    }

    #[test]
    fn parses_names() {
        assert_eq!("sim".parse::<Estimator>().unwrap(), Estimator::Sim);
        assert!("service".parse::<Estimator>().is_err());
    }
}
