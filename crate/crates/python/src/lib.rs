//! Python bindings. Agents are numbered from 0, as in the Rust library;
//! config files keep their 1-based numbering.

use std::path::PathBuf;

use ppac::adversary::{construct_alternative_world, verify_indistinguishability};
use ppac::analysis::{
    contraction_suite, masking_suite, nullspace_suite, random_instances, SuiteReport,
};
use ppac::config::{load_config as load, parse_config};
use ppac::engine::{NetworkState, Simulator};
use ppac::linalg::DEFAULT_TOL;
use ppac::schedule::{EdgeWeights, OrthoVectorSet, SwitchingWeights, WeightSchedule};
use ppac::topology::{Edge, Topology as CoreTopology};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(pyppac, PpacError, PyException);
create_exception!(pyppac, ConfigError, PpacError);
create_exception!(pyppac, PrivacyViolation, PpacError);

fn err(e: ppac::Error) -> PyErr {
    match e {
        ppac::Error::Config { .. } => ConfigError::new_err(e.to_string()),
        ppac::Error::PrivacyViolation { .. } => PrivacyViolation::new_err(e.to_string()),
        _ => PpacError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PpacError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn state(states: Vec<Vec<f64>>) -> PyResult<NetworkState> {
    NetworkState::new(states).map_err(err)
}

/// Undirected network with honest-but-curious agents marked.
#[pyclass(frozen)]
struct Topology {
    inner: CoreTopology,
}

#[pymethods]
impl Topology {
    #[new]
    #[pyo3(signature = (n, edges, adversaries = Vec::new()))]
    fn new(n: usize, edges: Vec<(usize, usize)>, adversaries: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTopology::new(n, &edges, &adversaries).map_err(err)?,
        })
    }

    /// The five-agent reference network.
    #[staticmethod]
    #[pyo3(signature = (adversaries = Vec::new()))]
    fn reference(adversaries: Vec<usize>) -> Self {
        Self {
            inner: ppac::topology::reference_five_agent(&adversaries),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().map(Edge::endpoints).collect()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        Ok(self
            .inner
            .neighbors(i)
            .map_err(err)?
            .iter()
            .copied()
            .collect())
    }

    fn adversaries(&self) -> Vec<usize> {
        self.inner.adversaries()
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn legitimate_neighbor_exists(&self, b: usize) -> PyResult<bool> {
        self.inner.legitimate_neighbor_exists(b).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Topology(n={}, edges={:?})", self.inner.n(), self.edges())
    }
}

/// Mutually orthogonal vectors `v_1 .. v_D`, `D = d + d_virtual`.
#[pyfunction]
fn ortho_vectors(d: usize, d_virtual: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(OrthoVectorSet::build(d, d_virtual)
        .map_err(err)?
        .vectors()
        .to_vec())
}

/// Seeded switching weights on a topology together with the step size.
#[pyclass(frozen)]
struct Protocol {
    topology: CoreTopology,
    weights: SwitchingWeights,
}

#[pymethods]
impl Protocol {
    #[new]
    fn new(
        topology: &Topology,
        d: usize,
        d_virtual: usize,
        sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let vectors = OrthoVectorSet::build(d, d_virtual).map_err(err)?;
        let schedule =
            WeightSchedule::sample(&topology.inner, vectors.period(), sigma, seed).map_err(err)?;
        Ok(Self {
            topology: topology.inner.clone(),
            weights: SwitchingWeights::new(schedule, vectors).map_err(err)?,
        })
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.weights.sigma()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.weights.vectors.dim()
    }

    /// `A_ij(k)` as a list of rows.
    fn weight(&self, i: usize, j: usize, k: u64) -> PyResult<Vec<Vec<f64>>> {
        if !self.topology.has_edge(i, j) {
            return Err(PpacError::new_err(format!("({i}, {j}) is not an edge")));
        }
        let e = Edge::new(i, j).map_err(err)?;
        Ok(self.weights.weight(e, k).to_rows())
    }

    /// States `x(0) .. x(steps)`, each a list of per-agent lifted vectors.
    fn run(&self, initial: Vec<Vec<f64>>, steps: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let sim = Simulator::new(&self.topology, &self.weights, self.weights.sigma());
        let traj = sim.run(&state(initial)?, steps).map_err(err)?;
        Ok(traj.states.into_iter().map(|s| s.states).collect())
    }

    /// Rank and payload-plane checks over `steps` protocol steps.
    fn masking_check<'py>(
        &self,
        py: Python<'py>,
        initial: Vec<Vec<f64>>,
        steps: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (rank, plane) = masking_suite(
            &self.topology,
            &self.weights,
            &state(initial)?,
            steps,
            1e-9,
            1e-10,
        )
        .map_err(err)?;
        to_py(py, &[rank, plane])
    }

    /// Builds the alternative world for `victim` with new real block
    /// `new_real` and replays both worlds. Raises `PrivacyViolation` on any
    /// mismatch.
    #[pyo3(signature = (initial, victim, helper, new_real, steps, seed = 0, tol = 1e-10, epsilon = 1e-8))]
    #[allow(clippy::too_many_arguments)]
    fn verify_privacy<'py>(
        &self,
        py: Python<'py>,
        initial: Vec<Vec<f64>>,
        victim: usize,
        helper: usize,
        new_real: Vec<f64>,
        steps: usize,
        seed: u64,
        tol: f64,
        epsilon: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let x0 = state(initial)?;
        let world = construct_alternative_world(
            &self.topology,
            &self.weights,
            &x0,
            victim,
            helper,
            &new_real,
            seed,
        )
        .map_err(err)?;
        let report = verify_indistinguishability(
            &self.topology,
            &self.weights,
            &x0,
            &world,
            steps,
            tol,
            epsilon,
        )
        .map_err(err)?;
        let out = to_py(py, &report)?;
        out.set_item("alternative_initial", world.initial)?;
        Ok(out)
    }
}

/// Element-wise mean of per-agent vectors.
#[pyfunction]
fn average(states: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(state(states)?.average())
}

/// Randomized null-space and contraction suites.
#[pyfunction]
#[pyo3(signature = (instances = 200, seed = 0))]
fn spectral_suites<'py>(
    py: Python<'py>,
    instances: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = random_instances(instances, seed);
    let reports: Vec<SuiteReport> = vec![
        nullspace_suite(&inst, DEFAULT_TOL).map_err(err)?,
        contraction_suite(&inst, DEFAULT_TOL).map_err(err)?,
    ];
    to_py(py, &reports)
}

/// Validated config as a dict.
#[pyfunction]
fn load_config<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &load(path).map_err(err)?)
}

/// Runs a config file (or JSON text) and writes the CSV and summary into
/// `out_dir`; returns the summary.
#[pyfunction]
#[pyo3(signature = (config, out_dir, seed = None, steps = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: String,
    out_dir: PathBuf,
    seed: Option<u64>,
    steps: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = if config.trim_start().starts_with('{') {
        parse_config(&config)
    } else {
        load(&config)
    }
    .and_then(|c| c.with_overrides(seed, steps))
    .map_err(err)?;
    let out = py
        .detach(|| ppac::experiment::run_experiment(&cfg, &out_dir))
        .map_err(err)?;
    to_py(py, &out.summary)
}

#[pymodule]
fn pyppac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Topology>()?;
    m.add_class::<Protocol>()?;
    m.add_function(wrap_pyfunction!(ortho_vectors, m)?)?;
    m.add_function(wrap_pyfunction!(average, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_suites, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("PpacError", m.py().get_type::<PpacError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("PrivacyViolation", m.py().get_type::<PrivacyViolation>())?;
    Ok(())
}
