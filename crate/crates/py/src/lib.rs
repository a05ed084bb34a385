//! Python bindings: the simulator world, policy inference, and evaluation.
//!
//! Build with `cargo build -p mrnav-py --release`; the resulting cdylib can
//! be imported as `mrnav_py` (see python/smoke_test.py for the loader).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

use mrnav::eval::{evaluate_policy, infer_action, EvalPolicy};
use mrnav::mdp::{Observation, RunningNormalizer};
use mrnav::net::{init_params, NetConfig, PolicyParams};
use mrnav::ppo::load_checkpoint;
use mrnav::rng::derive_stream;
use mrnav::scenarios::{build_world, ScenarioCatalog, ScenarioId};
use mrnav::sim::{cast_scan, detect_collisions, world_step, LidarSpec};

fn scenario_id(name: &str) -> PyResult<ScenarioId> {
    ScenarioId::parse(name).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A simulated 2D world of disc robots and segment obstacles.
#[pyclass]
struct World {
    inner: mrnav::sim::World,
}

#[pymethods]
impl World {
    /// Build a world from a named catalog scenario.
    #[staticmethod]
    #[pyo3(signature = (scenario, robots, seed, radius=0.12, dt=0.1))]
    fn from_scenario(scenario: &str, robots: usize, seed: u64, radius: f64, dt: f64) -> PyResult<Self> {
        let id = scenario_id(scenario)?;
        let spec = ScenarioCatalog::embedded().spec(id, robots, radius, dt);
        let inner = build_world(&spec, seed).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(World { inner })
    }

    /// Advance one tick with per-robot (v, w) actions.
    fn step(&mut self, actions: Vec<(f64, f64)>) -> PyResult<()> {
        let acts: Vec<[f64; 2]> = actions.iter().map(|&(v, w)| [v, w]).collect();
        self.inner =
            world_step(&self.inner, &acts).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(())
    }

    fn poses(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .robots
            .iter()
            .map(|r| (r.pose.x, r.pose.y, r.pose.theta))
            .collect()
    }

    fn goals(&self) -> Vec<(f64, f64)> {
        self.inner
            .robots
            .iter()
            .map(|r| (r.goal[0], r.goal[1]))
            .collect()
    }

    fn goal_distances(&self) -> Vec<f64> {
        self.inner.robots.iter().map(|r| r.goal_distance()).collect()
    }

    fn statuses(&self) -> Vec<String> {
        self.inner
            .robots
            .iter()
            .map(|r| format!("{:?}", r.status).to_lowercase())
            .collect()
    }

    /// Lidar scan for one robot.
    #[pyo3(signature = (robot, n_beams=128, fov=std::f64::consts::PI, max_range=4.0))]
    fn scan(&self, robot: usize, n_beams: usize, fov: f64, max_range: f64) -> PyResult<Vec<f64>> {
        if robot >= self.inner.robots.len() {
            return Err(PyValueError::new_err("robot index out of range"));
        }
        let spec = LidarSpec {
            n_beams,
            fov,
            max_range,
        };
        spec.validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(cast_scan(&self.inner, robot, &spec))
    }

    fn collisions(&self) -> Vec<bool> {
        detect_collisions(&self.inner)
    }

    #[getter]
    fn tick(&self) -> u64 {
        self.inner.tick
    }

    #[getter]
    fn n_robots(&self) -> usize {
        self.inner.robots.len()
    }
}

/// A Gaussian navigation policy with its frozen observation normalizer.
#[pyclass]
struct Policy {
    params: PolicyParams,
    net: NetConfig,
    normalizer: RunningNormalizer,
}

#[pymethods]
impl Policy {
    /// Load a trained checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let state = load_checkpoint(&path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Policy {
            params: state.policy,
            net: state.net,
            normalizer: state.normalizer,
        })
    }

    /// Fresh randomly initialized policy (identity normalizer).
    #[staticmethod]
    #[pyo3(signature = (seed, n_beams=128))]
    fn init(seed: u64, n_beams: usize) -> PyResult<Self> {
        let net = NetConfig::with_beams(n_beams);
        net.validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let (params, _) = init_params(&net, seed);
        Ok(Policy {
            params,
            net,
            normalizer: RunningNormalizer::new(3 * n_beams + 4),
        })
    }

    #[getter]
    fn n_beams(&self) -> usize {
        self.net.n_beams
    }

    /// Velocity command for one observation. `scan_stack` holds the last
    /// three scans, newest last.
    #[pyo3(signature = (scan_stack, goal, vel, deterministic=true, seed=0))]
    fn act(
        &self,
        scan_stack: Vec<Vec<f64>>,
        goal: (f64, f64),
        vel: (f64, f64),
        deterministic: bool,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        if scan_stack.len() != 3 {
            return Err(PyValueError::new_err("scan_stack must hold 3 frames"));
        }
        for frame in &scan_stack {
            if frame.len() != self.net.n_beams {
                return Err(PyValueError::new_err(format!(
                    "each frame needs {} beams, got {}",
                    self.net.n_beams,
                    frame.len()
                )));
            }
        }
        let obs = Observation {
            scan_stack,
            goal_polar: [goal.0, goal.1],
            velocity: [vel.0, vel.1],
        };
        let mut rng = derive_stream(seed, 0);
        let a = infer_action(
            &self.params,
            &self.net,
            &self.normalizer,
            &obs,
            deterministic,
            &mut rng,
        );
        Ok((a[0], a[1]))
    }
}

/// Evaluate a checkpoint on a catalog scenario; returns a dict of rates.
#[pyfunction]
#[pyo3(signature = (checkpoint, scenario, episodes=20, seed=1, robots=None, deterministic=true))]
fn evaluate(
    py: Python<'_>,
    checkpoint: PathBuf,
    scenario: &str,
    episodes: u64,
    seed: u64,
    robots: Option<usize>,
    deterministic: bool,
) -> PyResult<Py<PyDict>> {
    let state = load_checkpoint(&checkpoint).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let id = scenario_id(scenario)?;
    let catalog = state
        .cfg
        .catalog()
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let n_robots = robots.unwrap_or_else(|| catalog.default_robots(id));
    let spec = catalog.spec(id, n_robots, state.cfg.sim.robot_radius, state.cfg.sim.dt);
    let policy = EvalPolicy::Learned {
        policy: &state.policy,
        net: &state.net,
        normalizer: &state.normalizer,
        deterministic,
    };
    let (summary, _) = evaluate_policy(
        &spec,
        &policy,
        episodes,
        seed,
        &state.cfg.lidar,
        &state.cfg.reward,
        state.cfg.sim.horizon,
    )
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let dict = PyDict::new(py);
    dict.set_item("episodes", summary.episodes)?;
    dict.set_item("success_rate", summary.success_rate)?;
    dict.set_item("collision_rate", summary.collision_rate)?;
    dict.set_item("timeout_rate", summary.timeout_rate)?;
    dict.set_item("mean_arrival_time", summary.mean_arrival_time)?;
    dict.set_item("mean_path_length", summary.mean_path_length)?;
    dict.set_item("mean_reward", summary.mean_reward)?;
    Ok(dict.into())
}

/// Scenario ids available in the embedded catalog.
#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    ScenarioId::ALL.iter().map(|id| id.as_str()).collect()
}

#[pymodule]
fn mrnav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<World>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    Ok(())
}
