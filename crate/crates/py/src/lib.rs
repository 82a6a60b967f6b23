//! Python bindings: `import nanoswarm`.
//!
//! Vectors cross the boundary as 3-tuples of floats. Gateway messages and run
//! summaries are exchanged as JSON strings with the same schema the WebSocket
//! gateway uses. Every failure raises `nanoswarm.NanoswarmError`.

use nanoswarm::control::{hierarchical_step, ControlGains, FlatSetpoint};
use nanoswarm::dynamics::{rk4_step, CommandFPQR, QuadParams, QuadState};
use nanoswarm::formation;
use nanoswarm::gateway::{self, ClientMessage, ServerMessage};
use nanoswarm::netsim::{AgentId, Network, QosProfile, TopologyGraph};
use nanoswarm::orchestrator::{self as orch, ScenarioConfig};
use nanoswarm::planning::{self, PolynomialSpline, Waypoint};
use nanoswarm::tasking::{self, GreedyOptions, PdvrpInstance, Task, Vehicle};
use nanoswarm::Vec3;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

pyo3::create_exception!(nanoswarm, NanoswarmError, PyException);

type V3 = (f64, f64, f64);

fn v(t: V3) -> Vec3 {
    Vec3::new(t.0, t.1, t.2)
}

fn t(v: &Vec3) -> V3 {
    (v.x, v.y, v.z)
}

fn err(e: impl std::fmt::Display) -> PyErr {
    NanoswarmError::new_err(e.to_string())
}

/// Quadrotor point-mass model with default physical parameters.
#[pyclass(name = "Quadrotor")]
struct PyQuadrotor {
    state: QuadState,
    params: QuadParams,
    gains: ControlGains,
}

#[pymethods]
impl PyQuadrotor {
    #[new]
    #[pyo3(signature = (position, velocity = (0.0, 0.0, 0.0), attitude = (0.0, 0.0, 0.0)))]
    fn new(position: V3, velocity: V3, attitude: V3) -> Self {
        Self {
            state: QuadState {
                position: v(position),
                velocity: v(velocity),
                attitude: v(attitude),
            },
            params: QuadParams::default(),
            gains: ControlGains::default(),
        }
    }

    #[getter]
    fn position(&self) -> V3 {
        t(&self.state.position)
    }

    #[getter]
    fn velocity(&self) -> V3 {
        t(&self.state.velocity)
    }

    /// Roll, pitch, yaw in radians.
    #[getter]
    fn attitude(&self) -> V3 {
        t(&self.state.attitude)
    }

    #[getter]
    fn hover_thrust(&self) -> f64 {
        self.params.hover_thrust()
    }

    /// One RK4 step under collective thrust (N) and body rates (rad/s).
    #[pyo3(signature = (thrust, rates, dt = 0.01))]
    fn step(&mut self, thrust: f64, rates: V3, dt: f64) -> PyResult<()> {
        self.state = rk4_step(
            &self.state,
            &CommandFPQR::new(thrust, v(rates)),
            &self.params,
            dt,
        )
        .map_err(err)?;
        Ok(())
    }

    /// Runs the hierarchical controller toward a full-state setpoint, then
    /// steps. Returns the applied (thrust, rates).
    #[pyo3(signature = (position, velocity = (0.0, 0.0, 0.0), acceleration = (0.0, 0.0, 0.0), yaw = 0.0, dt = 0.01))]
    fn track(
        &mut self,
        position: V3,
        velocity: V3,
        acceleration: V3,
        yaw: f64,
        dt: f64,
    ) -> PyResult<(f64, V3)> {
        let sp = FlatSetpoint::full_state(v(position), v(velocity), v(acceleration), yaw, 0.0);
        let cmd = hierarchical_step(&self.state, &sp, &self.gains, &self.params).map_err(err)?;
        self.state = rk4_step(&self.state, &cmd, &self.params, dt).map_err(err)?;
        Ok((cmd.thrust, t(&cmd.rates)))
    }
}

/// Piecewise-quintic trajectory.
#[pyclass(name = "Spline")]
struct PySpline {
    inner: PolynomialSpline,
}

fn waypoints(points: Vec<Vec<f64>>) -> PyResult<Vec<Waypoint>> {
    points
        .into_iter()
        .map(|p| match p.as_slice() {
            [x, y, z, time] => Ok(Waypoint::new(Vec3::new(*x, *y, *z), 0.0, *time)),
            [x, y, z, time, yaw] => Ok(Waypoint::new(Vec3::new(*x, *y, *z), *yaw, *time)),
            _ => Err(err("waypoints are (x, y, z, t) or (x, y, z, t, yaw)")),
        })
        .collect()
}

#[pymethods]
impl PySpline {
    /// Spline through `(x, y, z, t[, yaw])` waypoints, at rest at both ends.
    #[staticmethod]
    fn through(points: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = planning::interpolate_waypoints(&waypoints(points)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn point_to_point(start: V3, goal: V3, duration: f64) -> PyResult<Self> {
        let inner = planning::point_to_point(v(start), v(goal), duration).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn start_time(&self) -> f64 {
        self.inner.start_time()
    }

    #[getter]
    fn end_time(&self) -> f64 {
        self.inner.end_time()
    }

    fn knot_times(&self) -> Vec<f64> {
        self.inner.knot_times()
    }

    /// Dict with position, velocity, acceleration, yaw and yaw_rate at `t`.
    fn sample<'py>(&self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.sample_full(t);
        let d = PyDict::new(py);
        d.set_item("position", self::t(&s.position))?;
        d.set_item("velocity", self::t(&s.velocity))?;
        d.set_item("acceleration", self::t(&s.acceleration))?;
        d.set_item("yaw", s.yaw)?;
        d.set_item("yaw_rate", s.yaw_rate)?;
        Ok(d)
    }

    fn retime(&self, factor: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.retime(factor).map_err(err)?,
        })
    }

    /// Leaves this spline at `t_switch` with continuous derivatives and
    /// passes through the new waypoints.
    fn replan(&self, t_switch: f64, points: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = planning::replan(&self.inner, t_switch, &waypoints(points)?).map_err(err)?;
        Ok(Self { inner })
    }
}

/// Row-major grid slots.
#[pyfunction]
#[pyo3(signature = (rows, cols, spacing, origin = (0.0, 0.0, 0.0)))]
fn grid_positions(rows: usize, cols: usize, spacing: f64, origin: V3) -> Vec<V3> {
    formation::grid_positions(rows, cols, spacing, v(origin))
        .iter()
        .map(t)
        .collect()
}

/// Solves a pickup-and-delivery instance. `vehicles` holds `(start,
/// capacity)` pairs and `tasks` holds `(pickup, delivery, load)` triples.
/// Returns `{"cost": float, "routes": [[task, ...], ...]}`.
#[pyfunction]
#[pyo3(signature = (vehicles, tasks, greedy = false))]
fn solve_pdvrp<'py>(
    py: Python<'py>,
    vehicles: Vec<(V3, f64)>,
    tasks: Vec<(V3, V3, f64)>,
    greedy: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = PdvrpInstance::new(
        vehicles
            .into_iter()
            .map(|(s, capacity)| Vehicle {
                start: v(s),
                capacity,
            })
            .collect(),
        tasks
            .into_iter()
            .map(|(p, d, load)| Task {
                pickup: v(p),
                delivery: v(d),
                load,
            })
            .collect(),
    )
    .map_err(err)?;
    let plan = if greedy {
        let n = inst.vehicles.len();
        let mut net = Network::with_static(TopologyGraph::complete(n), QosProfile::reliable())
            .map_err(err)?;
        tasking::greedy_allocate_distributed(&mut net, &inst, GreedyOptions::default())
            .map_err(err)?
    } else {
        tasking::solve_exact(&inst).map_err(err)?
    };
    let d = PyDict::new(py);
    d.set_item("cost", plan.total_cost)?;
    d.set_item("routes", plan.orders())?;
    Ok(d)
}

/// A scenario being stepped from Python.
#[pyclass(name = "Simulation", unsendable)]
struct PySimulation {
    inner: Option<orch::Simulation>,
}

impl PySimulation {
    fn sim(&self) -> PyResult<&orch::Simulation> {
        self.inner
            .as_ref()
            .ok_or_else(|| err("simulation already finished"))
    }

    fn sim_mut(&mut self) -> PyResult<&mut orch::Simulation> {
        self.inner
            .as_mut()
            .ok_or_else(|| err("simulation already finished"))
    }

    fn build(cfg: ScenarioConfig) -> PyResult<Self> {
        Ok(Self {
            inner: Some(orch::Simulation::new(cfg).map_err(err)?),
        })
    }
}

#[pymethods]
impl PySimulation {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::build(ScenarioConfig::from_toml_str(text).map_err(err)?)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::build(orch::load_scenario(path).map_err(err)?)
    }

    #[getter]
    fn time(&self) -> PyResult<f64> {
        Ok(self.sim()?.time())
    }

    #[getter]
    fn n_agents(&self) -> PyResult<usize> {
        Ok(self.sim()?.n_agents())
    }

    fn step(&mut self) -> PyResult<()> {
        self.sim_mut()?.step().map_err(err)
    }

    fn run_until(&mut self, t: f64) -> PyResult<()> {
        self.sim_mut()?.run_until(t).map_err(err)
    }

    fn positions(&self) -> PyResult<Vec<V3>> {
        Ok(self.sim()?.positions().iter().map(t).collect())
    }

    /// "flying" or "shutdown".
    fn status(&self, agent: usize) -> PyResult<&'static str> {
        self.sim()?
            .status(AgentId(agent))
            .map(|s| s.as_str())
            .ok_or_else(|| err(format!("no agent {agent}")))
    }

    fn formation_error(&self) -> PyResult<Option<f64>> {
        Ok(self.sim()?.formation_error())
    }

    /// Applies a JSON operator command; returns the JSON ack or rejection.
    fn command(&mut self, message: &str) -> PyResult<String> {
        let sim = self.sim_mut()?;
        let reply = match gateway::parse_client_message(message) {
            Ok(ClientMessage::Command(cmd)) => match gateway::handle_command(sim, &cmd) {
                Ok(ack) => ServerMessage::Ack(ack),
                Err(r) => ServerMessage::Rejection(r),
            },
            Err(r) => ServerMessage::Rejection(r),
        };
        Ok(reply.to_json())
    }

    /// Current state frame as JSON.
    fn state_frame(&self) -> PyResult<String> {
        Ok(ServerMessage::State(gateway::state_frame(self.sim()?)).to_json())
    }

    /// Scenario summary as JSON.
    fn scenario(&self) -> PyResult<String> {
        Ok(ServerMessage::Scenario(gateway::scenario_summary(self.sim()?)).to_json())
    }

    /// Closes the log and returns the run summary as JSON.
    fn finish(&mut self) -> PyResult<String> {
        let sim = self
            .inner
            .take()
            .ok_or_else(|| err("simulation already finished"))?;
        let summary = sim.finish().map_err(err)?;
        serde_json::to_string(&summary).map_err(err)
    }
}

/// Runs a scenario file to `until` (default: its duration); returns the run
/// summary as JSON.
#[pyfunction]
#[pyo3(signature = (path, until = None))]
fn run_scenario(path: &str, until: Option<f64>) -> PyResult<String> {
    let cfg = orch::load_scenario(path).map_err(err)?;
    let summary = orch::run_scenario(&cfg, until).map_err(err)?;
    serde_json::to_string(&summary).map_err(err)
}

#[pymodule]
#[pyo3(name = "nanoswarm")]
pub fn nanoswarm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NanoswarmError", m.py().get_type::<NanoswarmError>())?;
    m.add("PROTOCOL_VERSION", gateway::PROTOCOL_VERSION)?;
    m.add_class::<PyQuadrotor>()?;
    m.add_class::<PySpline>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(grid_positions, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pdvrp, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
