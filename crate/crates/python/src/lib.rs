use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use she_core::harness::{self, ExperimentManifest, RunOptions};
use she_core::noise::{self, NoiseSpec};
use she_core::operators::{self, FiniteRankOperator};
use she_core::regularity::{self, AnchorAggregate, LagPlan, NormKind};
use she_core::solver::{self, SolutionPath};
use she_core::spectral::{EigenSystem, GridField};
use she_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Validation(v) => PyValueError::new_err(v.join("\n")),
        Error::Format(_) | Error::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Q-Wiener noise specification.
#[pyclass(module = "she_py", frozen)]
struct Noise {
    inner: NoiseSpec,
}

#[pymethods]
impl Noise {
    /// Eigenvalues `scale * n^(-2 r)` on `modes` modes per axis.
    #[staticmethod]
    #[pyo3(signature = (dim, modes, scale, r, epsilon = 0.0))]
    fn power_law(dim: usize, modes: usize, scale: f64, r: f64, epsilon: f64) -> PyResult<Self> {
        let inner = NoiseSpec::power_law(dim, modes, scale, r, epsilon);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues()
    }

    fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Partial sum, tail bound and convergence flag of the summability series.
    fn check_cq<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &noise::check_cq_condition(&self.inner).map_err(err)?)
    }

    fn sample(&self, steps: usize, t_final: f64, seed: u64, path_id: u64) -> PyResult<Wiener> {
        let inner = noise::sample_wiener_increments(&self.inner, steps, t_final, seed, path_id).map_err(err)?;
        Ok(Wiener { inner })
    }

    fn __repr__(&self) -> String {
        format!("Noise({:?}, modes={}, epsilon={})", self.inner.law, self.inner.modes, self.inner.epsilon)
    }
}

#[pyclass(module = "she_py", frozen)]
struct Wiener {
    inner: noise::WienerPath,
}

#[pymethods]
impl Wiener {
    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn mode_count(&self) -> usize {
        self.inner.mode_count()
    }

    /// Increments of step `m`, one per noise mode.
    fn step(&self, m: usize) -> PyResult<Vec<f64>> {
        if m >= self.inner.steps() {
            return Err(PyValueError::new_err(format!("step {m} out of range")));
        }
        Ok(self.inner.step(m).to_vec())
    }

    /// Brownian path of mode `n`, starting at zero.
    fn mode_path(&self, n: usize) -> PyResult<Vec<f64>> {
        if n >= self.inner.mode_count() {
            return Err(PyValueError::new_err(format!("mode {n} out of range")));
        }
        Ok(self.inner.mode_path(n))
    }

    /// Brownian-bridge refinement by a power-of-two factor.
    fn refine(&self, factor: usize) -> PyResult<Wiener> {
        let inner = noise::refine_path(&self.inner, factor).map_err(err)?;
        Ok(Wiener { inner })
    }
}

#[pyclass(module = "she_py", frozen)]
struct Path {
    inner: SolutionPath,
}

#[pymethods]
impl Path {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    /// Spectral coefficients at every recorded time.
    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.states().to_vec()
    }

    #[getter]
    fn terminal(&self) -> Vec<f64> {
        self.inner.terminal().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Experiment manifest.
#[pyclass(module = "she_py", frozen)]
struct Manifest {
    inner: ExperimentManifest,
}

#[pymethods]
impl Manifest {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: harness::preset(name).map_err(err)?,
        })
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentManifest::parse(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentManifest::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn hash(&self) -> PyResult<String> {
        self.inner.hash().map_err(err)
    }

    fn violations(&self) -> Vec<String> {
        self.inner.violations()
    }

    fn check_names(&self) -> Vec<String> {
        self.inner.check_names()
    }

    /// Solves one path of the primary configuration.
    fn solve(&self, path_id: u64) -> PyResult<Path> {
        let m = &self.inner;
        let w = solver::wiener_path(&m.sim, &m.noise, path_id).map_err(err)?;
        let basis = EigenSystem::shared(m.sim.dim, m.sim.modes).map_err(err)?;
        let x0 = m.initial.field(basis).map_err(err)?;
        let model = m.model();
        let p = match m.sim.scheme {
            solver::Scheme::ExpEuler | solver::Scheme::Picard => solver::exp_euler_solve(&m.sim, &model, &x0, &w),
            solver::Scheme::OuExact => solver::ou_exact_solve(&m.sim, &model, &x0, &w),
        }
        .map_err(err)?;
        Ok(Path { inner: p })
    }

    fn __repr__(&self) -> String {
        format!("Manifest({:?})", self.inner.name)
    }
}

/// Runs an experiment; returns the artifact directory and the summary.
#[pyfunction]
#[pyo3(signature = (manifest, output_root = None, workers = None))]
fn run<'py>(
    py: Python<'py>,
    manifest: &Manifest,
    output_root: Option<PathBuf>,
    workers: Option<usize>,
) -> PyResult<(PathBuf, Bound<'py, PyAny>)> {
    let opts = RunOptions { output_root, workers };
    let r = py.detach(|| harness::run_experiment(&manifest.inner, &opts)).map_err(err)?;
    Ok((r.dir, to_py(py, &r.summary)?))
}

#[pyfunction]
#[pyo3(signature = (dir, check, workers = None))]
fn replay<'py>(py: Python<'py>, dir: PathBuf, check: &str, workers: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| harness::replay(&dir, check, workers)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("identical", r.identical)?;
    d.set_item("recorded", to_py(py, &r.recorded)?)?;
    d.set_item("recomputed", to_py(py, &r.recomputed)?)?;
    Ok(d)
}

/// Monte Carlo gamma norm of the operator whose columns are grid fields.
#[pyfunction]
#[pyo3(signature = (columns, dim, q = 2.0, samples = 1000, seed = 0))]
fn gamma_norm(columns: Vec<Vec<f64>>, dim: usize, q: f64, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let fields = columns
        .into_iter()
        .map(|c| {
            let n_g = (c.len() as f64).powf(1.0 / dim as f64).round() as usize;
            GridField::new(dim, n_g, c)
        })
        .collect::<she_core::Result<Vec<_>>>()
        .map_err(err)?;
    let r = FiniteRankOperator::new(fields).map_err(err)?;
    let g = operators::gamma_norm_mc(&r, q, samples, seed).map_err(err)?;
    Ok((g.estimate, g.std_error))
}

/// Hölder exponent of scalar sample paths on a uniform grid of step `dt`.
#[pyfunction]
#[pyo3(signature = (paths, dt, p = 2.0, aggregate = "mean", seed = 0))]
fn temporal_holder<'py>(
    py: Python<'py>,
    paths: Vec<Vec<f64>>,
    dt: f64,
    p: f64,
    aggregate: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let aggregate = match aggregate {
        "mean" => AnchorAggregate::Mean,
        "max" => AnchorAggregate::Max,
        other => return Err(PyValueError::new_err(format!("aggregate must be mean or max, got {other:?}"))),
    };
    let basis = EigenSystem::shared(1, 1).map_err(err)?;
    let paths = paths
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let t = (v.len().max(1) - 1) as f64 * dt;
            let states = v.into_iter().map(|x| vec![x]).collect();
            SolutionPath::from_states(basis.clone(), i as u64, dt, 1, states).map(|s| (s, t))
        })
        .collect::<she_core::Result<Vec<_>>>()
        .map_err(err)?;
    let Some(&(_, t_final)) = paths.first() else {
        return Err(PyValueError::new_err("no paths"));
    };
    let paths: Vec<SolutionPath> = paths.into_iter().map(|(s, _)| s).collect();
    let plan = LagPlan {
        aggregate,
        ..LagPlan::standard(dt, t_final)
    };
    let est = regularity::temporal_holder_estimate(&paths, p, NormKind::Lq { q: 2.0 }, &plan, seed).map_err(err)?;
    to_py(py, &est)
}

/// Terminal variance of one mode of the additive linear equation started at zero.
#[pyfunction]
fn ou_variance(lam: f64, lam_q: f64, t: f64) -> f64 {
    solver::ou_variance(lam, lam_q, t)
}

#[pymodule]
fn she_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Noise>()?;
    m.add_class::<Wiener>()?;
    m.add_class::<Path>()?;
    m.add_class::<Manifest>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_norm, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_holder, m)?)?;
    m.add_function(wrap_pyfunction!(ou_variance, m)?)?;
    m.add("PRESETS", harness::PRESET_NAMES.to_vec())?;
    Ok(())
}
