//! Python bindings for the odforge pipeline.
//!
//! Structured results (shift, calibration summary, metrics, manifests)
//! come back as plain dicts and lists.

use std::path::PathBuf;

use odforge::calibrate::{self as cal, CalibrationProblem};
use odforge::config::PipelineConfig;
use odforge::fixtures::MiniCounty;
use odforge::network::{self, RoadGraph, SpeedDefaults};
use odforge::pipeline;
use odforge::vrpbench::{self, Algorithm, PDInstance, PDSolution, SolveOptions};
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py_err(e: odforge::Error) -> PyErr {
    use odforge::Error as E;
    let msg = e.to_string();
    match e {
        E::MissingArtifact(_) => PyFileNotFoundError::new_err(msg),
        E::Io { .. } => PyOSError::new_err(msg),
        E::Config(_) | E::Marginals(_) | E::Calibrate(_) | E::Vrp(_) | E::Geometry { .. } | E::Csv { .. } | E::Json { .. } => {
            PyValueError::new_err(msg)
        }
        _ => PyRuntimeError::new_err(msg),
    }
}

/// Serialize through JSON into native Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Pipeline configuration loaded from TOML.
#[pyclass(name = "PipelineConfig", module = "odforge_py", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PipelineConfig::load(&path).map_err(to_py_err)?,
        })
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: PathBuf) {
        self.inner.output_dir = dir;
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.calibrate.alpha
    }

    #[setter]
    fn set_alpha(&mut self, v: f64) {
        self.inner.calibrate.alpha = v;
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.calibrate.beta
    }

    #[setter]
    fn set_beta(&mut self, v: f64) {
        self.inner.calibrate.beta = v;
    }

    #[getter]
    fn vrp_enabled(&self) -> bool {
        self.inner.vrp.enabled
    }

    #[setter]
    fn set_vrp_enabled(&mut self, v: bool) {
        self.inner.vrp.enabled = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "PipelineConfig(seed={}, output_dir={:?}, alpha={}, beta={})",
            self.inner.seed, self.inner.output_dir, self.inner.calibrate.alpha, self.inner.calibrate.beta
        )
    }
}

/// Fidelity report over the trips in an output directory.
#[pyclass(name = "ValidationReport", module = "odforge_py")]
struct PyReport {
    inner: odforge::validate::ValidationReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    /// `(name, passed, hard)` per check.
    fn checks(&self) -> Vec<(String, bool, bool)> {
        self.inner.checks().into_iter().map(|c| (c.name.to_string(), c.passed, c.hard)).collect()
    }

    fn hard_failures(&self) -> Vec<String> {
        self.inner.hard_failures().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn jaccard_mean(&self) -> f64 {
        self.inner.jaccard_raw.mean
    }

    #[getter]
    fn travel_tv(&self) -> (f64, Option<f64>) {
        (
            self.inner.travel_initial.pooled.tv,
            self.inner.travel_calibrated.as_ref().map(|h| h.pooled.tv),
        )
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __repr__(&self) -> String {
        format!("ValidationReport(passed={})", self.inner.passed())
    }
}

/// Initial trips and the mean-speed shift.
#[pyfunction]
fn synthesize<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let shift = py.detach(|| pipeline::synthesize(&cfg)).map_err(to_py_err)?;
    to_py(py, &shift)
}

/// Per-origin calibration and resampled trips.
#[pyfunction]
fn calibrate<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let summary = py.detach(|| pipeline::calibrate(&cfg)).map_err(to_py_err)?;
    to_py(py, &summary)
}

#[pyfunction]
fn validate(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| pipeline::validate(&cfg)).map_err(to_py_err)?;
    Ok(PyReport { inner })
}

/// Benchmark metrics, one list per sampled instance.
#[pyfunction(name = "bench")]
fn run_bench<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let runs = py.detach(|| pipeline::bench(&cfg)).map_err(to_py_err)?;
    to_py(py, &runs)
}

/// Every stage; returns the artifact manifest.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let manifest = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(to_py_err)?;
    to_py(py, &manifest)
}

/// Write mini-county inputs to `dir`; returns the config path.
#[pyfunction]
#[pyo3(signature = (dir, seed = 2024, trips_per_origin = 200, peak_factor = 0.35))]
fn gen_mini_county(dir: PathBuf, seed: u64, trips_per_origin: u64, peak_factor: f64) -> PyResult<PathBuf> {
    let county = MiniCounty {
        seed,
        trips_per_origin,
        peak_factor,
        ..MiniCounty::default()
    };
    county.write(&dir).map_err(to_py_err)
}

/// One origin's calibration program.
#[pyclass(name = "CalibrationProblem", module = "odforge_py", from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: CalibrationProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (dest_targets, block_targets, bin_targets, initial, bin_of, alpha = 1.0, beta = 1.0, origin = "origin".to_string()))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        dest_targets: Vec<u64>,
        block_targets: Vec<u64>,
        bin_targets: Vec<u64>,
        initial: Vec<Vec<u64>>,
        bin_of: Vec<Vec<usize>>,
        alpha: f64,
        beta: f64,
        origin: String,
    ) -> PyResult<Self> {
        let inner = CalibrationProblem {
            origin,
            n_o: dest_targets.iter().sum(),
            dest_targets,
            block_targets,
            bin_targets,
            initial,
            bin_of,
            alpha,
            beta,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Objective of an integer grid, or `None` if it breaks a marginal.
    fn objective(&self, counts: Vec<Vec<u64>>) -> Option<f64> {
        self.inner.is_feasible(&counts).then(|| self.inner.evaluate(&counts).objective)
    }

    /// Optimal grid and slacks as a dict.
    #[pyo3(signature = (node_limit = cal::DEFAULT_NODE_LIMIT))]
    fn solve<'py>(&self, py: Python<'py>, node_limit: usize) -> PyResult<Bound<'py, PyAny>> {
        let sol = cal::solve_origin_with_limit(&self.inner, node_limit).map_err(to_py_err)?;
        to_py(py, &sol)
    }
}

/// Road network loaded from node and edge CSVs.
#[pyclass(name = "RoadGraph", module = "odforge_py")]
struct PyGraph {
    inner: RoadGraph,
}

#[pymethods]
impl PyGraph {
    #[staticmethod]
    fn load(nodes: PathBuf, edges: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: network::load_graph(&nodes, &edges, &SpeedDefaults::default()).map_err(to_py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.nodes().len()
    }

    /// `(distance_m, duration_min)` of the fastest route.
    fn route(&self, from_node: u64, to_node: u64, depart_minute: u32) -> PyResult<(f64, f64)> {
        let r = self.inner.route(from_node, to_node, depart_minute).map_err(to_py_err)?;
        Ok((r.distance_m, r.duration_min))
    }

    fn snap(&self, lon: f64, lat: f64) -> PyResult<u64> {
        self.inner.snap(odforge::geo::LonLat::new(lon, lat)).map_err(to_py_err)
    }

    fn scale_speeds(&mut self, factor: f64) {
        self.inner.scale_speeds(factor);
    }
}

/// A pickup-delivery instance.
#[pyclass(name = "PDInstance", module = "odforge_py")]
struct PyInstance {
    inner: PDInstance,
}

fn parse_algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(to_py_err)
}

#[pymethods]
impl PyInstance {
    #[staticmethod]
    fn from_json(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PDInstance::from_json(&path).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn requests(&self) -> usize {
        self.inner.requests.len()
    }

    #[getter]
    fn fleet(&self) -> usize {
        self.inner.fleet
    }

    #[getter]
    fn capacity(&self) -> u32 {
        self.inner.capacity
    }

    /// Solve and verify; returns the metrics dict and the routes.
    #[pyo3(signature = (algorithm, budget_s = 10.0, max_iters = 2000, seed = 0))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        algorithm: &str,
        budget_s: f64,
        max_iters: usize,
        seed: u64,
    ) -> PyResult<(Bound<'py, PyAny>, Vec<Vec<usize>>)> {
        let algo = parse_algorithm(algorithm)?;
        let opts = SolveOptions {
            time_budget_s: budget_s,
            max_iters,
            seed,
        };
        let inst = &self.inner;
        let sol: PDSolution = py.detach(|| vrpbench::solve(inst, algo, &opts)).map_err(to_py_err)?;
        let metrics = vrpbench::metrics(inst, &sol);
        Ok((to_py(py, &metrics)?, sol.routes))
    }
}

#[pyfunction]
fn algorithms() -> Vec<&'static str> {
    Algorithm::ALL.iter().map(|a| a.name()).collect()
}

#[pymodule]
fn odforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(gen_mini_county, m)?)?;
    m.add_function(wrap_pyfunction!(algorithms, m)?)?;
    Ok(())
}
