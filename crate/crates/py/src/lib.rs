//! Python bindings for `binflow`.

use std::path::PathBuf;

use binflow::cli::{load_checkpoint, LoadedModel};
use binflow::denoiser::{Denoiser, OracleDenoiser};
use binflow::diagnostics::{run_suite, w1_empirical, SuiteConfig};
use binflow::likelihood::{nll_quadrature_many, DenoiserRate};
use binflow::model::checkpoint::save_model;
use binflow::model::train::{train, TrainConfig};
use binflow::poisson_calculus::{relative_density, FlowTables};
use binflow::sampler::{run_sampler, SamplerConfig};
use binflow::targets::{make_target, sample_target, standard_target, Family, TargetPmf};
use binflow::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::Training { .. } | Error::Sampler { .. } | Error::Numeric(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: Option<&str>) -> PyResult<T> {
    serde_json::from_str(text.unwrap_or("{}")).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Probability table of a count distribution on `{0, ..., support_cap}`.
#[pyclass(name = "Target", frozen)]
struct PyTarget {
    inner: TargetPmf,
}

#[pymethods]
impl PyTarget {
    /// `params` and `support_cap` default to the family's standard preset.
    #[new]
    #[pyo3(signature = (family, params=None, support_cap=None))]
    fn new(family: &str, params: Option<Vec<f64>>, support_cap: Option<usize>) -> PyResult<Self> {
        let fam: Family = family.parse().map_err(py_err)?;
        let inner = match (params, support_cap) {
            (None, None) => standard_target(fam),
            (p, c) => {
                let preset = fam.standard_preset();
                let p = p
                    .or_else(|| preset.as_ref().map(|x| x.0.clone()))
                    .ok_or_else(|| PyValueError::new_err("params are required"))?;
                let c = c
                    .or_else(|| preset.as_ref().map(|x| x.1))
                    .unwrap_or(p.len().saturating_sub(1));
                make_target(fam, &p, c)
            }
        }
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family().name()
    }

    #[getter]
    fn support_cap(&self) -> usize {
        self.inner.support_cap()
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    #[getter]
    fn tail_mass(&self) -> f64 {
        self.inner.tail_mass()
    }

    /// `(mean, variance)`.
    fn moments(&self) -> (f64, f64) {
        self.inner.moments()
    }

    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn log_pmf(&self, x: usize) -> PyResult<f64> {
        self.inner.log_pmf(x).map_err(py_err)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<u32> {
        sample_target(&self.inner, n, seed)
    }

    fn w1(&self, samples: Vec<u32>) -> PyResult<f64> {
        w1_empirical(&samples, &self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Target(family={:?}, support_cap={})",
            self.inner.family().name(),
            self.inner.support_cap()
        )
    }
}

/// Exact flow quantities of a target: `h`, intensities, marginals.
#[pyclass(name = "FlowTables", frozen)]
struct PyFlowTables {
    inner: FlowTables,
}

#[pymethods]
impl PyFlowTables {
    #[new]
    #[pyo3(signature = (target, final_time=1.0))]
    fn new(target: &PyTarget, final_time: f64) -> PyResult<Self> {
        Ok(Self {
            inner: relative_density(&target.inner, final_time).map_err(py_err)?,
        })
    }

    #[getter]
    fn final_time(&self) -> f64 {
        self.inner.final_time()
    }

    fn log_h_row(&self, t: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.log_h_row(t).map_err(py_err)?.to_vec())
    }

    fn intensity_row(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner.intensity_row(t).map_err(py_err)
    }

    fn marginal(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner.flow_marginal(t).map_err(py_err)
    }

    fn denoiser_row(&self, t: f64) -> PyResult<Vec<f64>> {
        self.inner.oracle_denoiser_row(t).map_err(py_err)
    }

    /// Exact NLL of each point by time quadrature.
    #[pyo3(signature = (xs, n_nodes=128))]
    fn nll(&self, py: Python<'_>, xs: Vec<u32>, n_nodes: usize) -> PyResult<Vec<f64>> {
        let est = py
            .detach(|| nll_quadrature_many(&self.inner, &xs, n_nodes))
            .map_err(py_err)?;
        Ok(est.iter().map(|e| e.value).collect())
    }

    /// Identity checks against the exact denoiser; returns the report as JSON.
    #[pyo3(signature = (config_json=None))]
    fn validate(&self, py: Python<'_>, config_json: Option<&str>) -> PyResult<String> {
        let cfg: SuiteConfig = from_json(config_json)?;
        let oracle = OracleDenoiser::new(self.inner.pmf().clone(), self.inner.final_time())
            .map_err(py_err)?;
        let report = py
            .detach(|| run_suite(&self.inner, &oracle, &cfg))
            .map_err(py_err)?;
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

enum Net {
    Oracle(OracleDenoiser),
    Learned(LoadedModel),
}

impl Net {
    fn denoiser(&self) -> &dyn Denoiser {
        match self {
            Net::Oracle(d) => d,
            Net::Learned(m) => m,
        }
    }
}

/// A denoiser: exact for a target, or a trained network.
#[pyclass(name = "Denoiser", frozen)]
struct PyDenoiser {
    inner: Net,
}

#[pymethods]
impl PyDenoiser {
    #[staticmethod]
    #[pyo3(signature = (target, final_time=1.0))]
    fn oracle(target: &PyTarget, final_time: f64) -> PyResult<Self> {
        Ok(Self {
            inner: Net::Oracle(OracleDenoiser::new(target.inner.clone(), final_time).map_err(py_err)?),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Net::Learned(load_checkpoint(&path, Some(1)).map_err(py_err)?),
        })
    }

    /// Trains on `data` with a JSON training config; the target supplies the
    /// scaling moments.
    #[staticmethod]
    #[pyo3(signature = (target, data, config_json=None))]
    fn train(py: Python<'_>, target: &PyTarget, data: Vec<u32>, config_json: Option<&str>) -> PyResult<Self> {
        let cfg: TrainConfig = from_json(config_json)?;
        let (mean, var) = target.inner.moments();
        let out = py
            .detach(|| {
                let scaling = cfg.scaling(mean, var)?;
                train::<f32>(&data, 1, scaling, &cfg)
            })
            .map_err(py_err)?;
        Ok(Self {
            inner: Net::Learned(LoadedModel::F32(out.model)),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let res = match &self.inner {
            Net::Learned(LoadedModel::F32(m)) => save_model(m, [0; 32], &path),
            Net::Learned(LoadedModel::F64(m)) => save_model(m, [0; 32], &path),
            Net::Oracle(_) => return Err(PyValueError::new_err("the exact denoiser has no weights")),
        };
        res.map_err(py_err)
    }

    #[getter]
    fn final_time(&self) -> f64 {
        self.inner.denoiser().final_time()
    }

    fn denoise_row(&self, t: f64, max_x: u32) -> PyResult<Vec<f64>> {
        self.inner.denoiser().denoise_row(t, max_x).map_err(py_err)
    }

    /// Final states of the sampler, configured by JSON sampler fields.
    #[pyo3(signature = (config_json=None))]
    fn sample(&self, py: Python<'_>, config_json: Option<&str>) -> PyResult<Vec<u32>> {
        let cfg: SamplerConfig = from_json(config_json)?;
        let out = py
            .detach(|| run_sampler(self.inner.denoiser(), &cfg))
            .map_err(py_err)?;
        Ok(out.finals)
    }

    /// NLL of each point under the rates this denoiser induces.
    #[pyo3(signature = (xs, n_nodes=128))]
    fn nll(&self, py: Python<'_>, xs: Vec<u32>, n_nodes: usize) -> PyResult<Vec<f64>> {
        let est = py
            .detach(|| nll_quadrature_many(&DenoiserRate(self.inner.denoiser()), &xs, n_nodes))
            .map_err(py_err)?;
        Ok(est.iter().map(|e| e.value).collect())
    }
}

#[pymodule]
#[pyo3(name = "binflow")]
fn binflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTarget>()?;
    m.add_class::<PyFlowTables>()?;
    m.add_class::<PyDenoiser>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
