//! Python bindings for the target-hunting core.

use std::path::PathBuf;

use nalgebra::Vector2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use uuv_hunt::acoustics::{self, WaterColumn};
use uuv_hunt::config::{self, ScenarioConfig};
use uuv_hunt::game::{self, GameState};
use uuv_hunt::runner::{self, Command, RunOptions};
use uuv_hunt::{dynamics, metrics, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(msg) => PyIOError::new_err(msg),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn state_from(pursuers: Vec<(f64, f64)>, target: (f64, f64)) -> PyResult<GameState> {
    let p = pursuers.into_iter().map(|(x, y)| Vector2::new(x, y)).collect();
    GameState::new(p, Vector2::new(target.0, target.1), 0, 0.0).map_err(to_py)
}

/// Sound speed in m/s for temperature (°C), salinity (psu) and pressure.
#[pyfunction]
#[pyo3(signature = (temperature=10.0, salinity=35.0, pressure=200.0))]
fn sound_speed(temperature: f64, salinity: f64, pressure: f64) -> PyResult<f64> {
    let water = WaterColumn::new(temperature, salinity, pressure).map_err(to_py)?;
    acoustics::sound_speed(&water).map_err(to_py)
}

/// Whole slots of a delay in seconds.
#[pyfunction]
fn delay_slots(delay: f64) -> PyResult<usize> {
    acoustics::delay_slots(delay).map_err(to_py)
}

/// Body-to-world rotation for a heading, as three rows.
#[pyfunction]
fn rotation_matrix(heading: f64) -> PyResult<Vec<Vec<f64>>> {
    let j = dynamics::rotation_matrix(heading).map_err(to_py)?;
    Ok((0..3).map(|r| (0..3).map(|c| j[(r, c)]).collect()).collect())
}

#[pyfunction]
fn collision_penalty(pursuers: Vec<(f64, f64)>, target: (f64, f64), i: usize, r: f64, c: f64) -> PyResult<f64> {
    game::collision_penalty(&state_from(pursuers, target)?, i, r, c).map_err(to_py)
}

#[pyfunction]
fn cohesion_penalty(pursuers: Vec<(f64, f64)>, target: (f64, f64), i: usize) -> PyResult<f64> {
    game::cohesion_penalty(&state_from(pursuers, target)?, i).map_err(to_py)
}

#[pyfunction]
fn kendall_pair(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::kendall_pair(&a, &b).map_err(to_py)
}

/// Team consistency index over per-pursuer pay-off series.
#[pyfunction]
fn consistency_index(series: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::consistency_index(&series).map_err(to_py)
}

#[pyfunction]
fn smooth_curve(values: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    metrics::smooth_curve(&values, window).map_err(to_py)
}

/// A validated scenario configuration.
#[pyclass(name = "ScenarioConfig", module = "uuv_hunt_py", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self { inner: ScenarioConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = ScenarioConfig::from_toml_str(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = config::load_config(&path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
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
    fn num_pursuers(&self) -> usize {
        self.inner.system.num_pursuers
    }

    fn sound_speed(&self) -> PyResult<f64> {
        self.inner.sound_speed().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("ScenarioConfig(seed={}, hash={})", self.inner.seed, &self.inner.hash()[..12])
    }
}

fn parse_command(name: &str) -> PyResult<Command> {
    match name {
        "simulate" => Ok(Command::Simulate),
        "train" => Ok(Command::Train),
        "eval" => Ok(Command::Eval),
        "analyze" => Ok(Command::Analyze),
        other => Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    }
}

/// Runs a command into `out_dir` and returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (command, config, out_dir, checkpoint=None, input=None, verbose=false, random_policy=false))]
fn run(
    py: Python<'_>,
    command: &str,
    config: &PyConfig,
    out_dir: PathBuf,
    checkpoint: Option<PathBuf>,
    input: Option<PathBuf>,
    verbose: bool,
    random_policy: bool,
) -> PyResult<String> {
    let command = parse_command(command)?;
    let opts = RunOptions {
        checkpoint,
        input,
        verbose,
        random_policy,
    };
    let cfg = config.inner.clone();
    let manifest = py
        .detach(|| runner::run(command, &cfg, &out_dir, &opts))
        .map_err(to_py)?;
    serde_json::to_string(&manifest).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn uuv_hunt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KNOT", dynamics::KNOT)?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(sound_speed, m)?)?;
    m.add_function(wrap_pyfunction!(delay_slots, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(collision_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(cohesion_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_pair, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_index, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
