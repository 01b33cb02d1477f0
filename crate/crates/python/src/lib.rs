//! Python bindings.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use crossreid::config::{Config as CoreConfig, KEYS};
use crossreid::eval::{self, ScoreMatrix};
use crossreid::{data, pipeline, verid, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) | Error::MissingKey(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Run configuration of flat `key = value` settings.
#[pyclass]
#[derive(Clone)]
struct Config {
    inner: CoreConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let mut inner = CoreConfig::default();
        if let Some(t) = text {
            inner.apply_str(t, "<python>").map_err(err)?;
        }
        Ok(Config { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)
    }

    fn dump(&self) -> String {
        self.inner.dump()
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        KEYS.iter().map(|k| k.0).collect()
    }
}

/// Per-epoch loss `(L, L_v, L_ii, L_iv)` from the three components.
#[pyfunction]
fn combined_loss(l_v: f64, l_ii: f64, l_iv: f64) -> PyResult<(f64, f64, f64, f64)> {
    let b = verid::combined_loss(l_v, l_ii, l_iv).map_err(err)?;
    Ok((b.total, b.verification, b.image_identification, b.video_identification))
}

/// CMC curve of a probe x gallery score matrix with ground-truth columns.
#[pyfunction]
fn cmc(scores: Vec<Vec<f64>>, truth: Vec<usize>) -> PyResult<Vec<f64>> {
    let m = ScoreMatrix::new(scores, truth).map_err(err)?;
    Ok(eval::cmc(&m).map_err(err)?.values)
}

/// `(train, test)` identity lists of each split.
#[pyfunction]
fn make_splits(n: usize, trials: usize, seed: u64) -> PyResult<Vec<(Vec<usize>, Vec<usize>)>> {
    Ok(data::make_splits(n, trials, seed)
        .map_err(err)?
        .into_iter()
        .map(|p| (p.train, p.test))
        .collect())
}

/// Writes a synthetic dataset tree; returns the identity count.
#[pyfunction]
fn synth(config: &Config, out: PathBuf) -> PyResult<usize> {
    Ok(data::synth_to_dir(&config.inner.synth(), &out).map_err(err)?.len())
}

/// Trains every trial under `out`; returns `(trial, first_loss, final_loss)`.
#[pyfunction]
fn train(py: Python<'_>, config: &Config, out: PathBuf) -> PyResult<Vec<(usize, f64, f64)>> {
    let cfg = config.inner.clone();
    let res = py.allow_threads(|| pipeline::train_all(&cfg, &out)).map_err(err)?;
    Ok(res.into_iter().map(|s| (s.trial, s.first_loss, s.final_loss)).collect())
}

/// Evaluates trained checkpoints; returns `(mean, per_trial)` CMC curves.
#[pyfunction]
#[pyo3(signature = (config, out, checkpoint=None))]
fn evaluate(
    py: Python<'_>,
    config: &Config,
    out: PathBuf,
    checkpoint: Option<PathBuf>,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let cfg = config.inner.clone();
    let (mean, curves) = py
        .allow_threads(|| pipeline::evaluate_all(&cfg, &out, checkpoint.as_deref()))
        .map_err(err)?;
    Ok((mean.values, curves.into_iter().map(|c| c.values).collect()))
}

/// Worst relative error of each gradient check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = crossreid::diffcore::gradcheck::op_suite(seed, 1e-5)
        .map_err(err)?
        .into_iter()
        .map(|(n, r)| (n, r.max_rel_error()))
        .collect();
    out.extend(
        crossreid::network::tiny_loss_suite(1e-4)
            .map_err(err)?
            .into_iter()
            .map(|(n, r)| (n, r.max_rel_error())),
    );
    Ok(out)
}

#[pymodule]
#[pyo3(name = "crossreid")]
fn crossreid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cmc, m)?)?;
    m.add_function(wrap_pyfunction!(make_splits, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
