//! Python bindings: configuration, the pipeline stages, and the reward,
//! advantage and metric functions.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyLookupError, PyOSError, PyValueError};
use pyo3::prelude::*;

use urp_core::config::RunConfig;
use urp_core::pipeline::{self, EvalOptions, RolloutOptions, TrainOptions};
use urp_core::reward::{self, RewardConfig};
use urp_core::world::Indicator;
use urp_core::{eval, grpo, UrpError};

fn to_py(e: UrpError) -> PyErr {
    let msg = e.to_string();
    match e {
        UrpError::Config(_) | UrpError::Refused(_) | UrpError::Domain(_) => PyValueError::new_err(msg),
        UrpError::Lookup(_) => PyLookupError::new_err(msg),
        UrpError::Io { .. } => PyOSError::new_err(msg),
        UrpError::Numeric(_) | UrpError::Capacity { .. } => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A run configuration. Every key has a default; unknown keys are rejected.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::from_toml(toml).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    /// The resolved configuration, defaults included.
    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn set_training_seed(&mut self, seed: u64) {
        self.inner.set_training_seed(seed);
    }

    fn set_world_seed(&mut self, seed: u64) {
        self.inner.world.seed = seed;
    }

    fn set_indicators(&mut self, names: Vec<String>) -> PyResult<()> {
        let parsed = Indicator::parse_list(&names.join(",")).map_err(to_py)?;
        self.inner.set_indicators(parsed).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={})", &self.inner.hash()[..12])
    }
}

/// Generates the dataset into `out` and returns the manifest.
#[pyfunction]
#[pyo3(signature = (config, out, overwrite = false))]
fn gen_data<'py>(py: Python<'py>, config: &PyConfig, out: PathBuf, overwrite: bool) -> PyResult<Bound<'py, PyAny>> {
    let m = pipeline::gen_data(&config.inner, &out, overwrite).map_err(to_py)?;
    json(py, &serde_json::to_string(&m).expect("manifest serializes"))
}

fn train(config: &PyConfig, data: PathBuf, out: PathBuf, checkpoint: Option<PathBuf>, overwrite: bool, grpo: bool) -> PyResult<(String, u64)> {
    let opts = TrainOptions {
        data,
        out,
        overwrite,
        checkpoint,
    };
    let s = if grpo {
        pipeline::train_grpo(&config.inner, &opts)
    } else {
        pipeline::train_sft_run(&config.inner, &opts)
    }
    .map_err(to_py)?;
    Ok((s.final_checkpoint.to_string_lossy().into_owned(), s.steps))
}

/// Trains with GRPO; returns `(final_checkpoint_path, steps)`.
#[pyfunction]
#[pyo3(signature = (config, data, out, checkpoint = None, overwrite = false))]
fn train_grpo(config: &PyConfig, data: PathBuf, out: PathBuf, checkpoint: Option<PathBuf>, overwrite: bool) -> PyResult<(String, u64)> {
    train(config, data, out, checkpoint, overwrite, true)
}

/// Trains with supervised fine-tuning; returns `(final_checkpoint_path, steps)`.
#[pyfunction]
#[pyo3(signature = (config, data, out, checkpoint = None, overwrite = false))]
fn train_sft(config: &PyConfig, data: PathBuf, out: PathBuf, checkpoint: Option<PathBuf>, overwrite: bool) -> PyResult<(String, u64)> {
    train(config, data, out, checkpoint, overwrite, false)
}

/// Evaluates a checkpoint and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (config, data, checkpoint, out, overwrite = false))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    data: PathBuf,
    checkpoint: PathBuf,
    out: PathBuf,
    overwrite: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let ev = pipeline::evaluate(
        &config.inner,
        &EvalOptions {
            data,
            checkpoint,
            out,
            overwrite,
        },
    )
    .map_err(to_py)?;
    json(py, &ev.report.to_json())
}

/// Samples `n` candidates for one region and returns the printed dump.
#[pyfunction]
#[pyo3(signature = (config, data, checkpoint, region, n = 8, indicator = None))]
fn rollout(config: &PyConfig, data: PathBuf, checkpoint: PathBuf, region: String, n: usize, indicator: Option<String>) -> PyResult<String> {
    let indicator = match indicator {
        Some(name) => Some(name.parse::<Indicator>().map_err(to_py)?),
        None => None,
    };
    pipeline::rollout(
        &config.inner,
        &RolloutOptions {
            data,
            checkpoint,
            region,
            indicator,
            n,
        },
    )
    .map_err(to_py)
}

/// Reward breakdown as a dict with `r_acc`, `r_fmt`, `composite`,
/// `parsed_value` and `parse_status`.
#[pyfunction]
#[pyo3(signature = (text, truth, lam = 0.1, scale_c = 10.0))]
fn composite_reward<'py>(py: Python<'py>, text: &str, truth: f64, lam: f64, scale_c: f64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RewardConfig { lambda: lam, scale_c };
    cfg.validate().map_err(to_py)?;
    let b = reward::composite_reward(text, truth, &cfg);
    json(
        py,
        &serde_json::json!({
            "r_acc": b.r_acc,
            "r_fmt": b.r_fmt,
            "composite": b.composite,
            "parsed_value": b.parsed_value,
            "parse_status": b.parse_status.as_str(),
        })
        .to_string(),
    )
}

/// The parsed answer value; raises `ValueError` naming the parse failure.
#[pyfunction]
fn parse_answer(text: &str) -> PyResult<f64> {
    reward::parse_answer(text).map_err(|s| PyValueError::new_err(s.as_str()))
}

#[pyfunction]
#[pyo3(signature = (rewards, std_floor = 1e-6))]
fn group_advantages(rewards: Vec<f64>, std_floor: f64) -> Vec<f64> {
    grpo::group_advantages(&rewards, std_floor)
}

#[pyfunction]
fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    grpo::clipped_term(ratio, advantage, eps)
}

#[pyfunction]
fn kl_estimator(delta: f64) -> f64 {
    grpo::kl_estimator(delta)
}

/// Spearman correlation with average ranks; `None` when undefined.
#[pyfunction]
fn spearman(preds: Vec<f64>, truths: Vec<f64>) -> Option<f64> {
    eval::spearman(&preds, &truths)
}

/// Coefficient of determination over the truths; `None` when undefined.
#[pyfunction]
fn r_squared(preds: Vec<f64>, truths: Vec<f64>) -> Option<f64> {
    eval::r_squared(&preds, &truths)
}

#[pymodule]
fn urp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train_grpo, m)?)?;
    m.add_function(wrap_pyfunction!(train_sft, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(rollout, m)?)?;
    m.add_function(wrap_pyfunction!(composite_reward, m)?)?;
    m.add_function(wrap_pyfunction!(parse_answer, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_term, m)?)?;
    m.add_function(wrap_pyfunction!(kl_estimator, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    Ok(())
}
