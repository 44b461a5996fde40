//! Python bindings: environments, configs, the trainer and checkpoints.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use iher::curiosity::{intrinsic_reward as core_intrinsic, CuriosityConfig, DisagreementSpace};
use iher::envs::{EnvParams, GoalEnv, GoalObservation, Task};
use iher::harness::{self, MetricsRow};
use iher::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::Config(_)
        | Error::Checkpoint(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::MemberOutOfRange { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_task(name: &str) -> PyResult<Task> {
    name.parse().map_err(to_py)
}

fn obs_dict<'py>(py: Python<'py>, o: &GoalObservation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("observation", o.observation.clone())?;
    d.set_item("achieved_goal", o.achieved_goal.clone())?;
    d.set_item("desired_goal", o.desired_goal.clone())?;
    Ok(d)
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("real_steps_total", r.real_steps_total)?;
    d.set_item("imag_steps_total", r.imag_steps_total)?;
    d.set_item("eval_success_rate", r.eval_success_rate)?;
    d.set_item("mean_intrinsic_reward", r.mean_intrinsic_reward)?;
    d.set_item("model_loss", r.model_loss)?;
    d.set_item("p_imag", r.p_imag)?;
    d.set_item("wall_clock_seconds", r.wall_clock_seconds)?;
    Ok(d)
}

/// A goal-conditioned task instance.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    env: Box<dyn GoalEnv>,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (task, episode_length = 50, success_tolerance = 0.05))]
    fn new(task: &str, episode_length: usize, success_tolerance: f64) -> PyResult<Self> {
        let params = EnvParams {
            episode_length,
            success_tolerance,
        };
        Ok(PyEnv {
            env: parse_task(task)?.make_env(&params),
        })
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.env.task().name()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.env.spec().obs_dim
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.env.spec().action_dim
    }

    #[getter]
    fn goal_dim(&self) -> usize {
        self.env.spec().goal_dim
    }

    fn reset<'py>(&mut self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let o = self.env.reset(seed);
        obs_dict(py, &o)
    }

    /// Returns `(observation, reward, done)`.
    fn step<'py>(&mut self, py: Python<'py>, action: Vec<f64>) -> PyResult<(Bound<'py, PyDict>, f64, bool)> {
        let s = self.env.step(&action).map_err(to_py)?;
        Ok((obs_dict(py, &s.observation)?, s.reward, s.done))
    }

    fn compute_reward(&self, achieved: Vec<f64>, desired: Vec<f64>) -> PyResult<f64> {
        self.env.spec().compute_reward(&achieved, &desired).map_err(to_py)
    }
}

/// Training configuration; keys match the config file format.
#[pyclass(name = "TrainConfig", unsendable, skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: harness::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (task = "point-reach", text = None))]
    fn new(task: &str, text: Option<&str>) -> PyResult<Self> {
        let task = parse_task(task)?;
        let inner = match text {
            Some(t) => harness::TrainConfig::parse_with_task(t, Some(task)).map_err(to_py)?,
            None => harness::TrainConfig::for_task(task),
        };
        Ok(PyTrainConfig { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: harness::TrainConfig::from_file(&path).map_err(to_py)?,
        })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = value.str()?.to_string();
        let text = match text.as_str() {
            "True" => "true".to_string(),
            "False" => "false".to_string(),
            _ => text,
        };
        self.inner.set(key, &text).map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.inner.task.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(task={}, algo={}, ablation={}, seed={})",
            self.inner.task, self.inner.algo, self.inner.ablation, self.inner.seed
        )
    }
}

#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: harness::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: &PyTrainConfig) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: harness::Trainer::new(config.inner.clone()).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: harness::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    /// Runs one epoch and returns its metrics row.
    fn run_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let row = self.inner.run_epoch().map_err(to_py)?;
        row_dict(py, &row)
    }

    /// Runs every remaining epoch.
    fn run<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        while !self.inner.is_finished() {
            self.inner.run_epoch().map_err(to_py)?;
        }
        self.history(py)
    }

    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.history().iter().map(|r| row_dict(py, r)).collect()
    }

    fn metrics_csv(&self) -> String {
        harness::metrics_csv(self.inner.history())
    }

    #[pyo3(signature = (episodes = 50, epoch = 0))]
    fn evaluate(&self, episodes: usize, epoch: u32) -> PyResult<f64> {
        self.inner.evaluate_policy(episodes, epoch).map_err(to_py)
    }

    /// Deterministic action of the current policy.
    fn act(&self, observation: Vec<f64>, desired_goal: Vec<f64>) -> PyResult<Vec<f64>> {
        let task = self.inner.config().task;
        let obs = GoalObservation {
            achieved_goal: task.achieved_goal(&observation),
            observation,
            desired_goal,
        };
        self.inner.policy().act(&obs, 1.0).map_err(to_py)
    }

    fn counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.counts();
        let d = PyDict::new(py);
        d.set_item("model_training", c.model_training)?;
        d.set_item("regenerations", c.regenerations)?;
        d.set_item("imaginary_rollouts", c.imaginary_rollouts)?;
        d.set_item("intrinsic_batches", c.intrinsic_batches)?;
        d.set_item("imaginary_samples", c.imaginary_samples)?;
        d.set_item("real_samples", c.real_samples)?;
        Ok(d)
    }

    #[getter]
    fn epochs_done(&self) -> u32 {
        self.inner.epochs_done()
    }

    #[getter]
    fn is_finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn config(&self) -> PyTrainConfig {
        PyTrainConfig {
            inner: self.inner.config().clone(),
        }
    }
}

/// Sparse reward: 0 within `tolerance` of the goal, -1 otherwise.
#[pyfunction]
#[pyo3(signature = (achieved, desired, tolerance = 0.05))]
fn compute_reward(achieved: Vec<f64>, desired: Vec<f64>, tolerance: f64) -> PyResult<f64> {
    iher::envs::compute_reward(&achieved, &desired, tolerance).map_err(to_py)
}

/// Clipped disagreement bonus for an ensemble variance `sigma`.
#[pyfunction]
#[pyo3(signature = (sigma, scale = 0.5, clip = 0.8))]
fn intrinsic_reward(sigma: f64, scale: f64, clip: f64) -> f64 {
    core_intrinsic(
        sigma,
        &CuriosityConfig {
            scale,
            clip,
            space: DisagreementSpace::Normalized,
        },
    )
}

/// Real steps at which `rows` first reach `threshold` success, or None.
#[pyfunction]
fn steps_to_threshold(trainer: &PyTrainer, threshold: f64) -> Option<u64> {
    harness::steps_to_threshold(trainer.inner.history(), threshold)
}

#[pymodule]
fn iher_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(compute_reward, m)?)?;
    m.add_function(wrap_pyfunction!(intrinsic_reward, m)?)?;
    m.add_function(wrap_pyfunction!(steps_to_threshold, m)?)?;
    m.add("ABLATIONS", harness::Ablation::VALID.to_vec())?;
    Ok(())
}
