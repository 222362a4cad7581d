//! Python bindings: pipeline configuration and stages, plus the numerical
//! building blocks (PCA, mixture fitting, PCHIP, relative improvement).

use std::path::PathBuf;

use atrada_core::evalharness::EvalReport;
use atrada_core::latentstats::{
    gmm_fit_em, gmm_loglik, gmm_sample, pca_fit, select_k_by_bic, EmConfig, Gmm, Pca, PcaTarget,
};
use atrada_core::pipeline::{self, Baseline};
use atrada_core::trajdata::{read_csv, Pchip};
use atrada_core::Error;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    if e.is_numerical() {
        PyArithmeticError::new_err(msg)
    } else if e.is_config() {
        PyValueError::new_err(msg)
    } else if matches!(e.root(), Error::Io { .. }) {
        PyOSError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(PyValueError::new_err("expected a non-empty list of non-empty rows"));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(n, d, rows.iter().flatten().copied()))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Pipeline settings; mirrors the TOML configuration file.
#[pyclass(name = "PipelineConfig", from_py_object)]
#[derive(Clone)]
struct PyPipelineConfig {
    inner: pipeline::PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    /// Defaults, or the given TOML document.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => pipeline::PipelineConfig::from_toml(text).map_err(to_py)?,
            None => pipeline::PipelineConfig::default(),
        };
        Ok(PyPipelineConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = pipeline::PipelineConfig::load(&path).map_err(to_py)?;
        Ok(PyPipelineConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    /// Use one seed for every stochastic stage.
    fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.inner.paths.out.clone()
    }

    #[setter]
    fn set_out(&mut self, out: PathBuf) {
        self.inner.paths.out = out;
    }

    #[getter]
    fn baseline(&self) -> &'static str {
        self.inner.generate.baseline.name()
    }

    #[setter]
    fn set_baseline(&mut self, name: &str) -> PyResult<()> {
        self.inner.generate.baseline = name.parse::<Baseline>().map_err(to_py)?;
        Ok(())
    }

    #[getter]
    fn m_count(&self) -> Option<usize> {
        self.inner.generate.m_count
    }

    #[setter]
    fn set_m_count(&mut self, m: Option<usize>) {
        self.inner.generate.m_count = m;
    }

    #[getter]
    fn generated_path(&self) -> PathBuf {
        self.inner.generated_path()
    }

    fn __repr__(&self) -> String {
        format!(
            "PipelineConfig(out={:?}, baseline={:?})",
            self.inner.paths.out.display().to_string(),
            self.inner.generate.baseline.name()
        )
    }
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &r.method)?;
    d.set_item("n_real", r.n_real)?;
    d.set_item("n_generated", r.n_generated)?;
    d.set_item("ds_classifier", r.ds_classifier)?;
    d.set_item("ds_accuracy", r.ds_accuracy)?;
    d.set_item("ds_per_seed", r.ds_per_seed.clone())?;
    d.set_item("ps", r.ps)?;
    d.set_item("ps_trtr", r.ps_trtr)?;
    d.set_item("ps_physical", r.ps_physical.clone())?;
    d.set_item("ps_trtr_physical", r.ps_trtr_physical.clone())?;
    d.set_item("ri_ds", r.ri_ds)?;
    d.set_item("ri_ps", r.ri_ps)?;
    d.set_item("constraint_pass_rate", r.constraint_pass_rate)?;
    d.set_item("real_constraint_pass_rate", r.real_constraint_pass_rate)?;
    d.set_item("recon_rmse", r.recon_rmse)?;
    Ok(d)
}

/// Simulate arrivals; returns the trajectory CSV path.
#[pyfunction]
fn simulate(cfg: &PyPipelineConfig) -> PyResult<PathBuf> {
    pipeline::cmd_simulate(&cfg.inner).map_err(to_py)
}

/// Build the dataset file; returns the number of sequences.
#[pyfunction]
fn build_dataset(cfg: &PyPipelineConfig) -> PyResult<usize> {
    Ok(pipeline::cmd_build_dataset(&cfg.inner).map_err(to_py)?.len())
}

/// Train the autoencoder; returns the held-out reconstruction RMSE.
#[pyfunction]
fn train_ae(cfg: &PyPipelineConfig) -> PyResult<f64> {
    Ok(pipeline::cmd_train_ae(&cfg.inner).map_err(to_py)?.recon_rmse)
}

/// Fit the density model of the configured baseline; returns `(P, K)` or
/// `None` for baselines without one.
#[pyfunction]
fn fit_latent(cfg: &PyPipelineConfig) -> PyResult<Option<(usize, usize)>> {
    let m = pipeline::cmd_fit_latent(&cfg.inner).map_err(to_py)?;
    Ok(m.map(|m| (m.pca.n_components(), m.gmm.k())))
}

/// Generate trajectories; returns how many were written.
#[pyfunction]
fn generate(cfg: &PyPipelineConfig) -> PyResult<usize> {
    Ok(pipeline::cmd_generate(&cfg.inner).map_err(to_py)?.trajectories.len())
}

#[pyfunction]
fn evaluate<'py>(py: Python<'py>, cfg: &PyPipelineConfig) -> PyResult<Bound<'py, PyDict>> {
    let r = pipeline::cmd_evaluate(&cfg.inner).map_err(to_py)?;
    report_dict(py, &r)
}

/// Every stage in order; returns the evaluation report.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, cfg: &PyPipelineConfig) -> PyResult<Bound<'py, PyDict>> {
    let r = pipeline::cmd_pipeline(&cfg.inner).map_err(to_py)?;
    report_dict(py, &r)
}

/// `(flight_id, [[t, lat, lon, alt], ...])` for every flight in a CSV file.
#[pyfunction]
fn read_trajectories(path: PathBuf) -> PyResult<Vec<(String, Vec<[f64; 4]>)>> {
    let trajs = read_csv(&path).map_err(to_py)?;
    Ok(trajs
        .iter()
        .map(|t| {
            let pts = t.points().iter().map(|p| [p.t, p.lat, p.lon, p.alt]).collect();
            (t.flight_id.clone(), pts)
        })
        .collect())
}

#[pyfunction]
fn relative_improvement(s1: f64, s2: f64) -> PyResult<f64> {
    atrada_core::evalharness::relative_improvement(s1, s2).map_err(to_py)
}

/// Monotone cubic interpolation of `(x, y)` at `xq`.
#[pyfunction]
fn pchip_interpolate(x: Vec<f64>, y: Vec<f64>, xq: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = Pchip::new(&x, &y).map_err(to_py)?;
    xq.iter()
        .map(|&q| p.eval(q).ok_or_else(|| PyValueError::new_err(format!("{q} outside the data range"))))
        .collect()
}

/// Principal components of a row matrix.
#[pyclass(name = "Pca")]
struct PyPca {
    inner: Pca,
}

#[pymethods]
impl PyPca {
    /// Keep `components` components, or the fewest reaching `variance`.
    #[staticmethod]
    #[pyo3(signature = (rows, variance = 0.99, components = None))]
    fn fit(rows: Vec<Vec<f64>>, variance: f64, components: Option<usize>) -> PyResult<Self> {
        let target = components.map_or(PcaTarget::Variance(variance), PcaTarget::Components);
        Ok(PyPca {
            inner: pca_fit(&matrix(&rows)?, target).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn explained_variances(&self) -> Vec<f64> {
        self.inner.explained_variances.clone()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.components)
    }

    fn project(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.project(&matrix(&x)?).map_err(to_py)?))
    }

    fn invert(&self, o: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.invert(&matrix(&o)?).map_err(to_py)?))
    }
}

/// Full-covariance Gaussian mixture.
#[pyclass(name = "GaussianMixture")]
struct PyGmm {
    inner: Gmm,
    #[pyo3(get)]
    trace: Vec<f64>,
}

#[pymethods]
impl PyGmm {
    /// EM fit with `k` components.
    #[staticmethod]
    #[pyo3(signature = (rows, k, seed = 0))]
    fn fit(rows: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Self> {
        let fit = gmm_fit_em(&matrix(&rows)?, k, seed, &EmConfig::default()).map_err(to_py)?;
        Ok(PyGmm {
            inner: fit.gmm,
            trace: fit.trace,
        })
    }

    /// EM fit with `K` chosen by BIC among `candidates`.
    #[staticmethod]
    #[pyo3(signature = (rows, candidates, seed = 0))]
    fn fit_bic(rows: Vec<Vec<f64>>, candidates: Vec<usize>, seed: u64) -> PyResult<Self> {
        let sel = select_k_by_bic(&matrix(&rows)?, &candidates, seed, &EmConfig::default()).map_err(to_py)?;
        Ok(PyGmm {
            inner: sel.fit.gmm,
            trace: sel.fit.trace,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means.iter().map(|m| m.iter().copied().collect()).collect()
    }

    /// Total log-likelihood of the rows.
    fn log_likelihood(&self, rows: Vec<Vec<f64>>) -> PyResult<f64> {
        gmm_loglik(&self.inner, &matrix(&rows)?).map_err(to_py)
    }

    #[pyo3(signature = (count, seed = 0))]
    fn sample(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&gmm_sample(&self.inner, count, seed).map_err(to_py)?))
    }
}

#[pymodule]
fn atrada(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PyPca>()?;
    m.add_class::<PyGmm>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_ae, m)?)?;
    m.add_function(wrap_pyfunction!(fit_latent, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(relative_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(pchip_interpolate, m)?)?;
    Ok(())
}
