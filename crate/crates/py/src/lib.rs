//! Python bindings: finite models, the oracle, particle systems, the Gibbs
//! chain, estimators and the config runner.

use std::path::PathBuf;

use fkpath_core::config::{builtin_catalog, ExperimentConfig};
use fkpath_core::estimators::{self, ReplicaPlan};
use fkpath_core::gibbs::{self, GibbsSettings};
use fkpath_core::models::conditions;
use fkpath_core::models::{builtin, BetaSchedule, FiniteCtmcModel};
use fkpath_core::oracle::Oracle;
use fkpath_core::rng::stream;
use fkpath_core::{mean_field, runner, CadlagPath, FkError, InitialLaw, Model as _, PathFunctional};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: FkError) -> PyErr {
    match e {
        FkError::Numeric(_) | FkError::DegenerateSemigroup(_) | FkError::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn law(x0: Option<usize>) -> InitialLaw<usize> {
    x0.map_or(InitialLaw::Uniform, InitialLaw::Dirac)
}

/// A finite-state model with a bounded potential.
#[pyclass(name = "Model", module = "fkpath", frozen)]
struct PyModel {
    inner: FiniteCtmcModel,
}

#[pymethods]
impl PyModel {
    /// Two states, rates 0->1 = 1 and 1->0 = 2, potential (0, 1).
    #[staticmethod]
    fn m2() -> Self {
        Self { inner: builtin::m2() }
    }

    #[staticmethod]
    fn ring4() -> Self {
        Self { inner: builtin::ring4() }
    }

    /// Two-state annealing family with `beta_t = beta0 + slope * t`.
    #[staticmethod]
    #[pyo3(signature = (beta0 = 0.0, slope = 1.0))]
    fn jarzynski2(beta0: f64, slope: f64) -> PyResult<Self> {
        let jm = builtin::jarzynski_two_state(BetaSchedule::linear(beta0, slope)).map_err(err)?;
        Ok(Self { inner: jm.model().clone() })
    }

    /// A time-homogeneous chain from a generator matrix and a potential vector.
    #[staticmethod]
    fn finite(rates: Vec<Vec<f64>>, potential: Vec<f64>) -> PyResult<Self> {
        let n = rates.len();
        if rates.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("rates must be a square matrix"));
        }
        let l = DMatrix::from_fn(n, n, |i, j| rates[i][j]);
        let inner = FiniteCtmcModel::homogeneous("custom", l, potential).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn potential_sup(&self) -> f64 {
        self.inner.potential_sup()
    }

    fn generator(&self, t: f64) -> Vec<Vec<f64>> {
        let g = self.inner.generator(t);
        g.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn potential(&self, t: f64) -> Vec<f64> {
        self.inner.potential_vector(t).iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        format!("Model({}, size={})", self.inner.name(), self.inner.size())
    }
}

/// A right-continuous piecewise-constant path.
#[pyclass(name = "Path", module = "fkpath", frozen)]
struct PyPath {
    inner: CadlagPath<usize>,
}

#[pymethods]
impl PyPath {
    #[new]
    fn new(t0: f64, t1: f64, x0: usize, events: Vec<(f64, usize)>) -> PyResult<Self> {
        Ok(Self {
            inner: CadlagPath::from_events(t0, t1, x0, events).map_err(err)?,
        })
    }

    #[getter]
    fn t0(&self) -> f64 {
        self.inner.start_time()
    }

    #[getter]
    fn t1(&self) -> f64 {
        self.inner.end_time()
    }

    #[getter]
    fn x0(&self) -> usize {
        *self.inner.initial_state()
    }

    #[getter]
    fn events(&self) -> Vec<(f64, usize)> {
        self.inner.events().to_vec()
    }

    fn at(&self, s: f64) -> PyResult<usize> {
        self.inner.eval(s).copied().map_err(err)
    }

    fn jump_count(&self) -> usize {
        self.inner.jump_count()
    }

    fn occupation_time(&self, state: usize) -> f64 {
        PathFunctional::occupation_time(state).evaluate(&self.inner)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json_string(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Path(t0={}, t1={}, x0={}, jumps={})",
            self.inner.start_time(),
            self.inner.end_time(),
            self.inner.initial_state(),
            self.inner.jump_count()
        )
    }
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// `(gamma, eta, z)` at time `t`.
#[pyfunction]
fn solve_gamma(model: &PyModel, gamma0: Vec<f64>, t: f64) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let sol = Oracle::new(&model.inner).solve_gamma(&gamma0, t).map_err(err)?;
    Ok((sol.gamma, sol.eta, sol.z))
}

/// `E_{Q_t}[∫_0^t 1{X_s = state} ds]`.
#[pyfunction]
fn smoothing_occupation(model: &PyModel, gamma0: Vec<f64>, state: usize, t: f64) -> PyResult<f64> {
    Oracle::new(&model.inner)
        .smoothing_integral(&gamma0, &|_, x| f64::from(u8::from(x == state)), t)
        .map_err(err)
}

#[pyfunction]
fn semigroup_matrix(model: &PyModel, s: f64, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let q = Oracle::new(&model.inner).semigroup_matrix(s, t).map_err(err)?;
    Ok(q.row_iter().map(|r| r.iter().copied().collect()).collect())
}

#[pyfunction]
fn check_h0_doeblin(model: &PyModel, t: f64, h: f64) -> PyResult<f64> {
    conditions::check_h0_doeblin(&model.inner, t, h).map_err(err)
}

#[pyfunction]
fn check_h2_q(model: &PyModel, s: f64, t: f64) -> PyResult<f64> {
    conditions::check_h2_q(&Oracle::new(&model.inner), s, t).map_err(err)
}

#[pyfunction]
fn sample_free_motion(model: &PyModel, x0: usize, t: f64, seed: u64) -> PyResult<PyPath> {
    let inner = model.inner.sample_free_motion(&x0, 0.0, t, &mut stream(seed)).map_err(err)?;
    Ok(PyPath { inner })
}

/// Final state of one mean-field run.
#[pyclass(name = "MeanFieldSystem", module = "fkpath", frozen)]
struct PyMeanField {
    inner: mean_field::GenealogySystem<usize>,
}

#[pymethods]
impl PyMeanField {
    #[getter]
    fn lines(&self) -> Vec<PyPath> {
        self.inner.lines().iter().map(|p| PyPath { inner: p.clone() }).collect()
    }

    #[getter]
    fn trajectories(&self) -> Vec<PyPath> {
        self.inner.trajectories().iter().map(|p| PyPath { inner: p.clone() }).collect()
    }

    /// `Z_t = exp(-∫_0^t m(ξ_s)(V_s) ds)`.
    #[getter]
    fn weight(&self) -> f64 {
        self.inner.many_body_weight()
    }

    /// `(time, jumper, target)` per executed selection.
    #[getter]
    fn selection_log(&self) -> Vec<(f64, usize, usize)> {
        self.inner.selection_log().iter().map(|e| (e.time, e.jumper, e.target)).collect()
    }

    fn terminal_states(&self) -> Vec<usize> {
        self.inner.trajectories().iter().map(|p| *p.terminal()).collect()
    }
}

/// Runs the mean-field system; `x0 = None` starts particles uniformly.
#[pyfunction]
#[pyo3(signature = (model, n, t, seed, x0 = None))]
fn simulate_mean_field(model: &PyModel, n: usize, t: f64, seed: u64, x0: Option<usize>) -> PyResult<PyMeanField> {
    let inner = mean_field::simulate_mean_field(&model.inner, n, t, &law(x0), &mut stream(seed)).map_err(err)?;
    Ok(PyMeanField { inner })
}

/// Runs the frozen-line system; returns `(lines, (frozen_targets, peer_targets))`
/// where line 0 is the frozen path.
#[pyfunction]
#[pyo3(signature = (model, n, frozen, seed, x0 = None))]
fn simulate_conditional(
    model: &PyModel,
    n: usize,
    frozen: &PyPath,
    seed: u64,
    x0: Option<usize>,
) -> PyResult<(Vec<PyPath>, (usize, usize))> {
    let t = frozen.inner.end_time();
    let d = fkpath_core::conditional::simulate_conditional(&model.inner, n, t, &frozen.inner, &law(x0), &mut stream(seed))
        .map_err(err)?;
    let lines = (0..n).map(|k| PyPath { inner: d.line(k).clone() }).collect();
    Ok((lines, d.target_histogram()))
}

/// One particle Gibbs step from `path`.
#[pyfunction]
#[pyo3(signature = (model, n, path, seed, x0 = None))]
fn gibbs_step(model: &PyModel, n: usize, path: &PyPath, seed: u64, x0: Option<usize>) -> PyResult<PyPath> {
    let t = path.inner.end_time();
    let inner = gibbs::gibbs_step(&model.inner, n, t, &path.inner, &law(x0), &mut stream(seed)).map_err(err)?;
    Ok(PyPath { inner })
}

/// Chain trace of `(terminal indicator of state, occupation time of state)`.
#[pyfunction]
#[pyo3(signature = (model, n, start, iters, burn_in, seed, state = 1, x0 = None))]
#[allow(clippy::too_many_arguments)]
fn gibbs_chain(
    model: &PyModel,
    n: usize,
    start: &PyPath,
    iters: usize,
    burn_in: usize,
    seed: u64,
    state: usize,
    x0: Option<usize>,
) -> PyResult<Vec<(f64, f64)>> {
    let settings = GibbsSettings {
        n_particles: n,
        horizon: start.inner.end_time(),
        iters,
        burn_in,
        keep_paths: false,
    };
    let fs = [PathFunctional::terminal_indicator(state), PathFunctional::occupation_time(state)];
    let trace = gibbs::gibbs_chain(&model.inner, &settings, &start.inner, &fs, &law(x0), seed).map_err(err)?;
    Ok(trace.values.iter().map(|v| (v[0], v[1])).collect())
}

/// `(mean, std_error)` of `m(ξ_t)(1{x = state}) Z_t` over replicas.
#[pyfunction]
#[pyo3(signature = (model, state, n, t, replicas, seed, x0 = None, threads = 0))]
#[allow(clippy::too_many_arguments)]
fn estimate_gamma(
    model: &PyModel,
    state: usize,
    n: usize,
    t: f64,
    replicas: usize,
    seed: u64,
    x0: Option<usize>,
    threads: usize,
) -> PyResult<(f64, f64)> {
    let plan = ReplicaPlan {
        n_particles: n,
        horizon: t,
        replicas,
        seed,
        threads,
    };
    let e = estimators::estimate_gamma(&model.inner, &law(x0), &PathFunctional::terminal_indicator(state), &plan)
        .map_err(err)?;
    Ok((e.mean, e.std_error))
}

/// Duality battery; one `(name, lhs, rhs, z)` tuple per functional.
#[pyfunction]
#[pyo3(signature = (model, n, t, replicas, seed, x0 = None, threads = 0))]
fn duality_check(
    model: &PyModel,
    n: usize,
    t: f64,
    replicas: usize,
    seed: u64,
    x0: Option<usize>,
    threads: usize,
) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let plan = ReplicaPlan {
        n_particles: n,
        horizon: t,
        replicas,
        seed,
        threads,
    };
    let battery = estimators::standard_duality_battery(t);
    let report = estimators::duality_check(&model.inner, &law(x0), &battery, &plan).map_err(err)?;
    Ok(report.rows.iter().map(|r| (r.name.clone(), r.lhs.mean, r.rhs.mean, r.z)).collect())
}

/// Runs a config file; returns `(exit_code, check_lines)`. Schema and
/// numeric failures come back as exit codes 2 and 3 with one message line.
#[pyfunction]
#[pyo3(signature = (path, out_dir = None))]
fn run_config(path: PathBuf, out_dir: Option<PathBuf>) -> (i32, Vec<String>) {
    let cfg = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => return (runner::EXIT_SCHEMA, vec![e.to_string()]),
    };
    match runner::run_config(&cfg, out_dir.as_deref()) {
        Ok(report) => (report.exit_code(), report.checks.iter().map(|c| c.line()).collect()),
        Err(e) => (e.exit_code(), vec![e.to_string()]),
    }
}

/// `(name, description, potential_sup, config_fragment)` per built-in model.
#[pyfunction]
fn builtin_models() -> Vec<(String, String, f64, String)> {
    builtin_catalog()
        .into_iter()
        .map(|e| (e.name.into(), e.description.into(), e.potential_sup, e.fragment.into()))
        .collect()
}

#[pymodule]
fn fkpath(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyPath>()?;
    m.add_class::<PyMeanField>()?;
    m.add_function(wrap_pyfunction!(solve_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(smoothing_occupation, m)?)?;
    m.add_function(wrap_pyfunction!(semigroup_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(check_h0_doeblin, m)?)?;
    m.add_function(wrap_pyfunction!(check_h2_q, m)?)?;
    m.add_function(wrap_pyfunction!(sample_free_motion, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_mean_field, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_conditional, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs_step, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs_chain, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(duality_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_models, m)?)?;
    Ok(())
}
