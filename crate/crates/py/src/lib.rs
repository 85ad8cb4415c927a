//! Python bindings for the EKI toolkit.
//!
//! Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use eki_core::driver::{run_eki, sample_initial_ensemble, EkiConfig, RunResult};
use eki_core::ensemble;
use eki_core::forward::{FailureInjection, LinearForward};
use eki_core::priors::{self, PriorGraph, Target};
use eki_core::robustness::{self, InflationConfig, LocalisationConfig};
use eki_core::runner::{self, persist, Executor};
use eki_core::EkiError;
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: EkiError) -> PyErr {
    match e {
        EkiError::Io { .. } => PyIOError::new_err(e.to_string()),
        EkiError::Dimension(_)
        | EkiError::InvalidArgument(_)
        | EkiError::NonFinite(_)
        | EkiError::Config(_)
        | EkiError::Schema { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(
            "expected a non-empty rectangular list of rows",
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Observation vector with independent Gaussian noise.
#[pyclass(name = "ObservationModel", frozen, from_py_object)]
#[derive(Clone)]
struct PyObservationModel {
    inner: ensemble::ObservationModel,
}

#[pymethods]
impl PyObservationModel {
    #[new]
    fn new(y: Vec<f64>, variances: Vec<f64>) -> PyResult<Self> {
        let inner = ensemble::ObservationModel::diagonal(DVector::from_vec(y), DVector::from_vec(variances))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().iter().copied().collect()
    }

    /// Half the noise-weighted squared residual of `pred`.
    fn misfit(&self, pred: Vec<f64>) -> PyResult<f64> {
        ensemble::data_misfit(&DVector::from_vec(pred), &self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("ObservationModel(dim={})", self.inner.dim())
    }
}

/// Outcome of an inversion.
#[pyclass(name = "RunSummary", frozen, get_all)]
struct PyRunSummary {
    converged: bool,
    status: String,
    alphas: Vec<f64>,
    times: Vec<f64>,
    failures: Vec<usize>,
    rho: Vec<Option<f64>>,
    /// Final ensemble, `n` rows by `J` columns.
    final_ensemble: Vec<Vec<f64>>,
    final_misfit_mean: Option<f64>,
}

#[pymethods]
impl PyRunSummary {
    #[getter]
    fn iterations(&self) -> usize {
        self.alphas.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunSummary(status={}, iterations={}, final_misfit_mean={})",
            self.status,
            self.alphas.len(),
            self.final_misfit_mean.map_or("None".into(), |m| m.to_string())
        )
    }
}

impl From<&RunResult> for PyRunSummary {
    fn from(r: &RunResult) -> Self {
        Self {
            converged: r.converged(),
            status: serde_json::to_string(&r.status).unwrap_or_default(),
            alphas: r.schedule.alphas.clone(),
            times: r.schedule.times.clone(),
            failures: r.iterations.iter().map(|it| it.failures).collect(),
            rho: r.iterations.iter().map(|it| it.rho).collect(),
            final_ensemble: rows(&r.final_ensemble().values),
            final_misfit_mean: r.final_misfit.map(|m| m.mean),
        }
    }
}

/// `(alpha, t_next)` chosen by the data misfit controller.
#[pyfunction]
fn select_alpha_dmc(misfits: Vec<f64>, q: usize, t: f64) -> PyResult<(f64, f64)> {
    let step = ensemble::select_alpha_dmc(&misfits, q, t).map_err(to_py)?;
    Ok((step.alpha, step.t_next))
}

#[pyfunction]
fn data_misfit(pred: Vec<f64>, obs: &PyObservationModel) -> PyResult<f64> {
    obs.misfit(pred)
}

#[pyfunction]
#[pyo3(signature = (x, x_prime, sigma, ell, nu = 1.0))]
fn matern_covariance(x: Vec<f64>, x_prime: Vec<f64>, sigma: f64, ell: Vec<f64>, nu: f64) -> PyResult<f64> {
    if x.len() != ell.len() || x_prime.len() != ell.len() {
        return Err(PyValueError::new_err("x, x_prime and ell must have equal length"));
    }
    let hyper = priors::MaternHyper {
        sigma,
        lambda_robin: ell.clone(),
        ell,
        nu,
    };
    hyper.validate().map_err(to_py)?;
    Ok(priors::matern_covariance(&x, &x_prime, &hyper))
}

#[pyfunction]
fn transform_uniform(theta: f64, a: f64, b: f64) -> PyResult<f64> {
    let t = Target::Uniform { a, b };
    t.validate().map_err(to_py)?;
    priors::transform_scalar(theta, &t).map_err(to_py)
}

#[pyfunction]
fn transform_truncated_normal(theta: f64, mean: f64, std: f64, lo: f64, hi: f64) -> PyResult<f64> {
    let t = Target::TruncatedNormal { mean, std, lo, hi };
    t.validate().map_err(to_py)?;
    priors::transform_scalar(theta, &t).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (v, beta = 0.6))]
fn localisation_entry(v: f64, beta: f64) -> f64 {
    robustness::localisation_entry(v, beta)
}

/// Posterior `(mean, covariance)` of `y = A theta + noise` under a standard-normal prior.
#[pyfunction]
fn linear_posterior(a: Vec<Vec<f64>>, obs: &PyObservationModel) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (mean, cov) = LinearForward::new(matrix(&a)?)
        .analytic_posterior(obs.inner.y(), obs.inner.covariance())
        .map_err(to_py)?;
    Ok((mean.iter().copied().collect(), rows(&cov)))
}

/// EKI on the linear model `A theta` with a standard-normal prior.
#[pyfunction]
#[pyo3(signature = (a, obs, ensemble_size, seed, workers = 1, failure_rate = 0.0, localise = false, inflate = false))]
#[allow(clippy::too_many_arguments)]
fn run_linear_eki(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    obs: &PyObservationModel,
    ensemble_size: usize,
    seed: u64,
    workers: usize,
    failure_rate: f64,
    localise: bool,
    inflate: bool,
) -> PyResult<PyRunSummary> {
    let a = matrix(&a)?;
    if a.nrows() != obs.inner.dim() {
        return Err(PyValueError::new_err("A must have one row per observation"));
    }
    let mut config = EkiConfig::new(ensemble_size, seed);
    config.localisation = localise.then(LocalisationConfig::default);
    config.inflation = inflate.then(InflationConfig::default);
    let prior = PriorGraph::standard_normal(a.ncols());
    let forward = FailureInjection::new(LinearForward::new(a), failure_rate).map_err(to_py)?;
    let exec = Executor::new(workers, None).map_err(to_py)?;
    let obs = obs.inner.clone();
    let result = py
        .detach(|| run_eki(&prior, &forward, &obs, &config, &exec))
        .map_err(to_py)?;
    Ok(PyRunSummary::from(&result))
}

fn load_config(config: Option<PathBuf>) -> PyResult<runner::RunConfig> {
    match config {
        Some(p) => runner::RunConfig::load(p).map_err(to_py),
        None => Ok(runner::RunConfig::shipped()),
    }
}

/// Runs the slice inversion (shipped configuration unless `config` is given)
/// and writes the output tree to `output`.
#[pyfunction]
#[pyo3(signature = (output, config = None, workers = 1, seed = None))]
fn run_slice(
    py: Python<'_>,
    output: PathBuf,
    config: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
) -> PyResult<PyRunSummary> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.eki.seed = s;
    }
    cfg.output_dir = output.clone();
    let exec = Executor::new(workers, cfg.timeout()).map_err(to_py)?;
    let run = py
        .detach(|| runner::run_slice(&cfg, &exec, &output))
        .map_err(to_py)?;
    Ok(PyRunSummary::from(&run.result))
}

/// Writes `<run_dir>/diagnostics` and returns its summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (run_dir, truth = None))]
fn diagnose(py: Python<'_>, run_dir: PathBuf, truth: Option<PathBuf>) -> PyResult<String> {
    let bundle = py
        .detach(|| {
            let truth = truth.as_deref().map(persist::read_json).transpose()?;
            runner::diagnose(&run_dir, truth.as_ref())
        })
        .map_err(to_py)?;
    serde_json::to_string(&bundle.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// `count` prior draws of the unconstrained slice parameters, one list per draw.
#[pyfunction]
#[pyo3(signature = (count, seed, config = None))]
fn sample_prior(count: usize, seed: u64, config: Option<PathBuf>) -> PyResult<Vec<Vec<f64>>> {
    let cfg = load_config(config)?;
    let forward = cfg.coarse_forward().map_err(to_py)?;
    let theta = sample_initial_ensemble(forward.prior().dim(), count, seed);
    Ok(rows(&theta.transpose()))
}

#[pymodule]
fn eki_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyObservationModel>()?;
    m.add_class::<PyRunSummary>()?;
    m.add_function(wrap_pyfunction!(select_alpha_dmc, m)?)?;
    m.add_function(wrap_pyfunction!(data_misfit, m)?)?;
    m.add_function(wrap_pyfunction!(matern_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(transform_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(transform_truncated_normal, m)?)?;
    m.add_function(wrap_pyfunction!(localisation_entry, m)?)?;
    m.add_function(wrap_pyfunction!(linear_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(run_linear_eki, m)?)?;
    m.add_function(wrap_pyfunction!(run_slice, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(sample_prior, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
