//! Python bindings: model graphs, accelerator configs, both estimators, the
//! search space, the reward and Pareto extraction.

use edgenas_core::estimator::{Estimator, ModelEstimate};
use edgenas_core::search::{pareto_indices, reward as core_reward, RewardMode, RewardSpec};
use edgenas_core::space::{canonical, decode as core_decode, mutate as core_mutate, sample as core_sample, space_size};
use edgenas_core::surrogate::{graph_hash, predict, SurrogateParams};
use edgenas_core::{sim, AcceleratorConfig, ArchGenome, ModelGraph, Skeleton};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(edgenas, EdgenasError, PyException, "Estimation or validation failure.");

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn failure(e: impl ToString) -> PyErr {
    EdgenasError::new_err(e.to_string())
}

/// A validated model graph.
#[pyclass(name = "ModelGraph", module = "edgenas", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModelGraph(ModelGraph);

#[pymethods]
impl PyModelGraph {
    /// Parses and validates the JSON model format. Malformed documents raise
    /// `ValueError`; structural violations raise `EdgenasError`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        use edgenas_core::ir::ModelError;
        ModelGraph::from_json_validated(text).map(Self).map_err(|e| match e {
            ModelError::Parse(_) => value_error(e),
            ModelError::Invalid(_) => failure(e),
        })
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.0.layers.len()
    }

    /// Input as `(height, width, channels)`.
    #[getter]
    fn input(&self) -> (u32, u32, u32) {
        (self.0.input.height, self.0.input.width, self.0.input.channels)
    }

    fn macs(&self) -> PyResult<u64> {
        self.0.total_cost().map(|c| c.macs).map_err(failure)
    }

    fn params(&self) -> PyResult<u64> {
        self.0.total_cost().map(|c| c.params).map_err(failure)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    fn hash(&self) -> String {
        graph_hash(&self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("ModelGraph(name={:?}, layers={})", self.0.name, self.0.layers.len())
    }
}

#[pyclass(name = "AcceleratorConfig", module = "edgenas", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(AcceleratorConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (array_rows, array_cols, clock_hz, dram_bw, onchip_bus_bw, buffer_bytes, bytes_per_element=1.0))]
    fn new(
        array_rows: u32,
        array_cols: u32,
        clock_hz: f64,
        dram_bw: f64,
        onchip_bus_bw: f64,
        buffer_bytes: u64,
        bytes_per_element: f64,
    ) -> PyResult<Self> {
        let cfg = AcceleratorConfig {
            array_rows,
            array_cols,
            clock_hz,
            dram_bw,
            onchip_bus_bw,
            buffer_bytes,
            bytes_per_element,
        };
        cfg.validate().map_err(value_error)?;
        Ok(Self(cfg))
    }

    #[staticmethod]
    fn edgetpu_like() -> Self {
        Self(AcceleratorConfig::edgetpu_like())
    }

    #[staticmethod]
    fn toy() -> Self {
        Self(AcceleratorConfig::toy())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        AcceleratorConfig::from_toml(text).map(Self).map_err(value_error)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        AcceleratorConfig::load(path).map(Self).map_err(value_error)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn array_rows(&self) -> u32 {
        self.0.array_rows
    }

    #[getter]
    fn array_cols(&self) -> u32 {
        self.0.array_cols
    }

    #[getter]
    fn clock_hz(&self) -> f64 {
        self.0.clock_hz
    }

    #[getter]
    fn dram_bw(&self) -> f64 {
        self.0.dram_bw
    }

    #[getter]
    fn onchip_bus_bw(&self) -> f64 {
        self.0.onchip_bus_bw
    }

    #[getter]
    fn buffer_bytes(&self) -> u64 {
        self.0.buffer_bytes
    }

    #[getter]
    fn bytes_per_element(&self) -> f64 {
        self.0.bytes_per_element
    }

    fn __repr__(&self) -> String {
        format!(
            "AcceleratorConfig({}x{}, clock_hz={}, dram_bw={}, onchip_bus_bw={}, buffer_bytes={})",
            self.0.array_rows, self.0.array_cols, self.0.clock_hz, self.0.dram_bw, self.0.onchip_bus_bw, self.0.buffer_bytes
        )
    }
}

#[pyclass(name = "LayerEstimate", module = "edgenas", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyLayerEstimate {
    name: String,
    latency_us: f64,
    bound: String,
    compute_us: f64,
    dram_us: f64,
    bus_us: f64,
}

#[pymethods]
impl PyLayerEstimate {
    fn __repr__(&self) -> String {
        format!("LayerEstimate({:?}, latency_us={}, bound={:?})", self.name, self.latency_us, self.bound)
    }
}

/// Whole-model estimate, full precision.
#[pyclass(name = "ModelEstimate", module = "edgenas", frozen, get_all, skip_from_py_object)]
struct PyModelEstimate {
    total_latency_us: f64,
    per_layer: Vec<PyLayerEstimate>,
    macs: u64,
    params: u64,
    estimator: String,
}

#[pymethods]
impl PyModelEstimate {
    fn __repr__(&self) -> String {
        format!(
            "ModelEstimate(total_latency_us={}, layers={}, estimator={:?})",
            self.total_latency_us,
            self.per_layer.len(),
            self.estimator
        )
    }
}

impl PyModelEstimate {
    fn new(e: ModelEstimate, estimator: Estimator) -> Self {
        Self {
            total_latency_us: e.total_latency_us,
            per_layer: e
                .per_layer
                .into_iter()
                .map(|l| PyLayerEstimate {
                    name: l.name,
                    latency_us: l.latency_us,
                    bound: l.bound.to_string(),
                    compute_us: l.compute_us,
                    dram_us: l.dram_us,
                    bus_us: l.bus_us,
                })
                .collect(),
            macs: e.macs,
            params: e.params,
            estimator: estimator.to_string(),
        }
    }
}

fn config_or_default(config: Option<&PyConfig>) -> AcceleratorConfig {
    config.map_or_else(AcceleratorConfig::edgetpu_like, |c| c.0.clone())
}

/// Latency of `graph` under `estimator` ("apm" or "sim"); the edgetpu-like
/// preset when no config is given.
#[pyfunction]
#[pyo3(signature = (graph, config=None, estimator="apm"))]
fn estimate(py: Python<'_>, graph: &PyModelGraph, config: Option<&PyConfig>, estimator: &str) -> PyResult<PyModelEstimate> {
    let estimator: Estimator = estimator.parse().map_err(value_error)?;
    let cfg = config_or_default(config);
    let graph = graph.0.clone();
    let e = py.detach(move || estimator.estimate(&graph, &cfg)).map_err(failure)?;
    Ok(PyModelEstimate::new(e, estimator))
}

/// Per-layer simulator counters as dicts, plus totals.
#[pyfunction]
#[pyo3(signature = (graph, config=None))]
fn simulate(py: Python<'_>, graph: &PyModelGraph, config: Option<&PyConfig>) -> PyResult<Py<PyAny>> {
    use pyo3::types::PyDict;
    let cfg = config_or_default(config);
    let g = graph.0.clone();
    let report = py.detach(move || sim::simulate_model(&g, &cfg)).map_err(failure)?;
    let out = PyDict::new(py);
    out.set_item("total_cycles", report.total_cycles)?;
    out.set_item("total_us", report.total_us)?;
    let layers = report
        .per_layer
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            d.set_item("cycles", l.cycles)?;
            d.set_item("compute_cycles", l.compute_cycles)?;
            d.set_item("dma_cycles", l.dma_cycles)?;
            d.set_item("fill_cycles", l.fill_cycles)?;
            d.set_item("tiles", l.tiles)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("per_layer", layers)?;
    Ok(out.into_any().unbind())
}

#[pyclass(name = "Skeleton", module = "edgenas", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySkeleton(Skeleton);

#[pymethods]
impl PySkeleton {
    /// The seven-stage default space.
    #[new]
    fn new() -> Self {
        Self(Skeleton::default())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Skeleton::from_toml(text).map(Self).map_err(value_error)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn size(&self) -> u128 {
        space_size(&self.0)
    }

    #[getter]
    fn num_stages(&self) -> usize {
        self.0.stages.len()
    }
}

fn skeleton_or_default(skeleton: Option<&PySkeleton>) -> Skeleton {
    skeleton.map_or_else(Skeleton::default, |s| s.0.clone())
}

/// One block choice per stage.
#[pyclass(name = "Genome", module = "edgenas", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGenome(ArchGenome);

#[pymethods]
impl PyGenome {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ArchGenome::from_json(text).map(Self).map_err(value_error)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __len__(&self) -> usize {
        self.0.stages().len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Genome({})", self.0.to_json())
    }
}

#[pyfunction]
#[pyo3(signature = (seed, skeleton=None))]
fn sample(seed: u64, skeleton: Option<&PySkeleton>) -> PyGenome {
    PyGenome(core_sample(&skeleton_or_default(skeleton), seed))
}

#[pyfunction]
#[pyo3(signature = (genome, seed, skeleton=None))]
fn mutate(genome: &PyGenome, seed: u64, skeleton: Option<&PySkeleton>) -> PyGenome {
    PyGenome(core_mutate(&genome.0, &skeleton_or_default(skeleton), seed))
}

/// Representative of the genome's equivalence class (genes that cannot
/// affect the decoded graph are reset).
#[pyfunction]
#[pyo3(name = "canonical", signature = (genome, skeleton=None))]
fn py_canonical(genome: &PyGenome, skeleton: Option<&PySkeleton>) -> PyGenome {
    PyGenome(canonical(&genome.0, &skeleton_or_default(skeleton)))
}

#[pyfunction]
#[pyo3(signature = (genome, skeleton=None))]
fn decode(genome: &PyGenome, skeleton: Option<&PySkeleton>) -> PyResult<PyModelGraph> {
    core_decode(&genome.0, &skeleton_or_default(skeleton))
        .map(PyModelGraph)
        .map_err(value_error)
}

/// Synthetic accuracy of a graph.
#[pyfunction]
#[pyo3(signature = (graph, noise_sd=0.003, seed=0))]
fn predict_accuracy(graph: &PyModelGraph, noise_sd: f64, seed: u64) -> PyResult<f64> {
    let params = SurrogateParams {
        noise_sd,
        seed,
        ..SurrogateParams::default()
    };
    params.validate().map_err(value_error)?;
    Ok(predict(&graph.0, &params))
}

/// `accuracy * (latency / target) ** exponent`; in "hard" mode the penalty
/// only applies above the target.
#[pyfunction]
#[pyo3(signature = (accuracy, latency_us, target_latency_us, exponent=-0.07, mode="soft"))]
fn reward(accuracy: f64, latency_us: f64, target_latency_us: f64, exponent: f64, mode: &str) -> PyResult<f64> {
    let mode = match mode {
        "soft" => RewardMode::Soft,
        "hard" => RewardMode::Hard,
        other => return Err(value_error(format!("unknown reward mode {other:?}"))),
    };
    let spec = RewardSpec {
        target_latency_us,
        exponent,
        mode,
    };
    core_reward(accuracy, latency_us, &spec).map_err(value_error)
}

/// Indices of the non-dominated `(latency, accuracy)` pairs, by latency.
#[pyfunction]
fn pareto_front(points: Vec<(f64, f64)>) -> Vec<usize> {
    pareto_indices(&points)
}

#[pymodule]
fn edgenas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EdgenasError", m.py().get_type::<EdgenasError>())?;
    m.add_class::<PyModelGraph>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyLayerEstimate>()?;
    m.add_class::<PyModelEstimate>()?;
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyGenome>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(mutate, m)?)?;
    m.add_function(wrap_pyfunction!(py_canonical, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(predict_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_front, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
