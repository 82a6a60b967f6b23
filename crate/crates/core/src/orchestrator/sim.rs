use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    ExecutionMode, FormationConfig, GuidanceConfig, Plant, ScenarioConfig, Solver,
};
use super::log::{
    write_metadata, AgentStatus, FlightLogRecord, FlightLogWriter, LogMetadata, Role,
};
use super::SimError;
use crate::control::{
    full_state_command_acceleration, hierarchical_step, ControlError, FlatSetpoint,
};
use crate::dynamics::{rk4_step, world_z, CommandFPQR, QuadState, Vec3};
use crate::formation::{bearing_control_input, formation_error, BearingSpec, NeighborState};
use crate::netsim::{AgentId, NetStats, Network, Topology, TopologyGraph};
use crate::planning::{interpolate_waypoints, PolynomialSpline, Waypoint};
use crate::tasking::{
    greedy_allocate_distributed, route_to_waypoints, solve_exact, GreedyOptions, RoutePlan,
};

const STALE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct FormationGuidance {
    spec: BearingSpec,
    kp: f64,
    kv: f64,
    plant: Plant,
    staleness: f64,
}

#[derive(Debug, Clone)]
enum Guidance {
    Idle,
    Formation(FormationGuidance),
    /// Per-agent scenario trajectories (trajectory and routing modes).
    Planned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitKind {
    Pickup,
    Delivery,
}

/// Closest approach of the serving agent to one route point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub agent: AgentId,
    pub task: usize,
    pub kind: VisitKind,
    pub point: Vec3,
    pub min_distance: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Agent {
    pub(crate) id: AgentId,
    pub(crate) state: QuadState,
    pub(crate) status: AgentStatus,
    pub(crate) role: Role,
    /// Reference used while guidance is off or idle.
    pub(crate) hold: (Vec3, f64),
    plan: Option<PolynomialSpline>,
    pub(crate) operator: Option<PolynomialSpline>,
    pub(crate) guidance_enabled: bool,
    setpoint: FlatSetpoint,
    command: CommandFPQR,
    /// Double-integrator acceleration held between control ticks.
    di_accel: Vec3,
    cache: BTreeMap<AgentId, (f64, NeighborState)>,
    shutdown_time: Option<f64>,
}

impl Agent {
    fn neighbor_state(&self) -> NeighborState {
        NeighborState::new(self.state.position, self.state.velocity)
    }

    /// The spline this agent is following at `t`, if any.
    pub(crate) fn active_spline(&self, t: f64) -> Option<&PolynomialSpline> {
        if self.status == AgentStatus::Shutdown {
            return None;
        }
        if let Some(op) = &self.operator {
            return Some(op);
        }
        self.plan
            .as_ref()
            .filter(|p| self.guidance_enabled && p.start_time() <= t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickCounts {
    pub physics: u64,
    pub control: u64,
    pub guidance: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: AgentId,
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Vec3,
    pub status: AgentStatus,
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shutdown_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub solver: Solver,
    pub cost: f64,
    pub routes: Vec<Vec<usize>>,
    pub visits: Vec<Visit>,
    pub max_visit_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub received: u64,
}

impl From<NetStats> for NetworkReport {
    fn from(s: NetStats) -> Self {
        Self {
            sent: s.sent,
            dropped: s.dropped,
            delivered: s.delivered,
            received: s.received,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub guidance: String,
    pub final_time: f64,
    pub ticks: TickCounts,
    pub agents: Vec<AgentSummary>,
    pub shutdowns: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formation_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingReport>,
    pub network: NetworkReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta_path: Option<PathBuf>,
    pub log_records: u64,
}

/// Fixed-rate multi-agent simulation.
///
/// Each call to [`Simulation::step`] advances one physics tick in the order
/// guidance, control, physics, geofence, log. Guidance and control run on
/// ticks divisible by their rate divisors.
pub struct Simulation {
    config: ScenarioConfig,
    dt: f64,
    control_div: u64,
    guidance_div: u64,
    tick: u64,
    pub(crate) agents: Vec<Agent>,
    net: Mutex<Network>,
    guidance: Guidance,
    counts: TickCounts,
    log: Option<FlightLogWriter>,
    routing: Option<(RoutePlan, Vec<Visit>)>,
}

fn lock(net: &Mutex<Network>) -> std::sync::MutexGuard<'_, Network> {
    net.lock().unwrap_or_else(|p| p.into_inner())
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n_agents();
        let (guidance, graph) = match &config.guidance {
            GuidanceConfig::Idle => (Guidance::Idle, None),
            GuidanceConfig::Formation(f) => {
                let fg = formation_guidance(f)?;
                let graph = fg.spec.communication_graph(n)?;
                (Guidance::Formation(fg), Some(graph))
            }
            GuidanceConfig::Pdvrp(_) | GuidanceConfig::Trajectory(_) => (Guidance::Planned, None),
        };
        let graph = match &config.network.in_neighbors {
            Some(lists) => TopologyGraph::from_in_neighbors(lists.clone())?,
            None => graph.unwrap_or_else(|| TopologyGraph::complete(n)),
        };
        let net = Network::new(Topology::Static(graph), config.network.qos(config.seed))?;

        let leaders = match &config.guidance {
            GuidanceConfig::Formation(f) => Some(f.leader_set()),
            _ => None,
        };
        let agents: Vec<Agent> = config
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let role = match &leaders {
                    Some(l) if l.contains(&i) => Role::Leader,
                    Some(_) => Role::Follower,
                    None => Role::None,
                };
                let state = QuadState {
                    position: a.position,
                    velocity: a.velocity,
                    attitude: Vec3::new(0.0, 0.0, a.yaw),
                };
                Agent {
                    id: AgentId(i),
                    state,
                    status: AgentStatus::Flying,
                    role,
                    hold: (a.position, a.yaw),
                    plan: None,
                    operator: None,
                    guidance_enabled: config.autostart,
                    setpoint: FlatSetpoint::hold(a.position, a.yaw),
                    command: CommandFPQR::hover(&config.params),
                    di_accel: Vec3::zeros(),
                    cache: BTreeMap::new(),
                    shutdown_time: None,
                }
            })
            .collect();

        let mut sim = Self {
            dt: config.rates.dt(),
            control_div: config.rates.control_divisor(),
            guidance_div: config.rates.guidance_divisor(),
            tick: 0,
            agents,
            net: Mutex::new(net),
            guidance,
            counts: TickCounts::default(),
            log: None,
            routing: None,
            config,
        };
        sim.install_plans()?;
        if let Some(path) = sim.config.log.path.clone() {
            sim.log = Some(FlightLogWriter::create(path)?);
        }
        Ok(sim)
    }

    fn install_plans(&mut self) -> Result<(), SimError> {
        match self.config.guidance.clone() {
            GuidanceConfig::Trajectory(t) => {
                for p in &t.plans {
                    self.agents[p.agent].plan = Some(interpolate_waypoints(&p.waypoints)?);
                }
            }
            GuidanceConfig::Pdvrp(p) => {
                let instance = self.config.pdvrp_instance(&p)?;
                let plan = match p.solver {
                    Solver::Exact => solve_exact(&instance)?,
                    Solver::Greedy => {
                        let opts = GreedyOptions {
                            rounds_per_phase: p.rounds_per_phase,
                            ..Default::default()
                        };
                        greedy_allocate_distributed(&mut lock(&self.net), &instance, opts)?
                    }
                };
                let mut visits = Vec::new();
                for (i, route) in plan.routes.iter().enumerate() {
                    for stop in route {
                        for (kind, pt) in [
                            (VisitKind::Pickup, stop.pickup),
                            (VisitKind::Delivery, stop.delivery),
                        ] {
                            visits.push(Visit {
                                agent: AgentId(i),
                                task: stop.task,
                                kind,
                                point: Vec3::new(pt.x, pt.y, p.cruise_altitude),
                                min_distance: f64::INFINITY,
                            });
                        }
                    }
                    if route.is_empty() {
                        continue;
                    }
                    let agent = &mut self.agents[i];
                    let start = agent.state.position;
                    let mut wps =
                        route_to_waypoints(route, &start, p.cruise_altitude, p.time_per_meter);
                    let climb = (start.z - p.cruise_altitude).abs() * p.time_per_meter;
                    for w in wps.iter_mut().skip(1) {
                        w.time += climb;
                        w.yaw = agent.hold.1;
                    }
                    wps[0] = Waypoint::new(start, agent.hold.1, 0.0);
                    agent.plan = Some(interpolate_waypoints(&wps)?);
                }
                self.routing = Some((plan, visits));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    /// Simulated time at the start of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn tick_counts(&self) -> TickCounts {
        self.counts
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn state(&self, i: AgentId) -> Option<&QuadState> {
        self.agents.get(i.0).map(|a| &a.state)
    }

    pub fn states(&self) -> Vec<QuadState> {
        self.agents.iter().map(|a| a.state).collect()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.agents.iter().map(|a| a.state.position).collect()
    }

    pub fn status(&self, i: AgentId) -> Option<AgentStatus> {
        self.agents.get(i.0).map(|a| a.status)
    }

    pub fn role(&self, i: AgentId) -> Option<Role> {
        self.agents.get(i.0).map(|a| a.role)
    }

    pub fn command(&self, i: AgentId) -> Option<CommandFPQR> {
        self.agents.get(i.0).map(|a| a.command)
    }

    /// Latest guidance output for agent `i`.
    pub fn setpoint(&self, i: AgentId) -> Option<FlatSetpoint> {
        self.agents.get(i.0).map(|a| a.setpoint)
    }

    /// Trajectory installed by an operator command, if any.
    pub fn operator_plan(&self, i: AgentId) -> Option<&PolynomialSpline> {
        self.agents.get(i.0).and_then(|a| a.operator.as_ref())
    }

    /// Scenario trajectory of agent `i` (trajectory and routing modes).
    pub fn scenario_plan(&self, i: AgentId) -> Option<&PolynomialSpline> {
        self.agents.get(i.0).and_then(|a| a.plan.as_ref())
    }

    pub fn network_stats(&self) -> NetStats {
        lock(&self.net).stats()
    }

    pub fn bearing_spec(&self) -> Option<&BearingSpec> {
        match &self.guidance {
            Guidance::Formation(f) => Some(&f.spec),
            _ => None,
        }
    }

    pub fn formation_error(&self) -> Option<f64> {
        let spec = self.bearing_spec()?;
        formation_error(&self.positions(), spec).ok()
    }

    pub fn route_plan(&self) -> Option<&RoutePlan> {
        self.routing.as_ref().map(|(p, _)| p)
    }

    pub fn visits(&self) -> &[Visit] {
        self.routing.as_ref().map_or(&[], |(_, v)| v)
    }

    fn concurrent(&self) -> bool {
        self.config.execution == ExecutionMode::Concurrent
    }

    /// Advances one physics tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        if self.tick.is_multiple_of(self.guidance_div) {
            self.guidance_step(t)?;
            self.counts.guidance += 1;
        }
        if self.tick.is_multiple_of(self.control_div) {
            self.control_step(t)?;
            self.counts.control += 1;
        }
        self.physics_step(t)?;
        self.counts.physics += 1;
        let t_end = (self.tick + 1) as f64 * self.dt;
        self.geofence_step(t_end);
        self.track_visits();
        self.log_step(t_end)?;
        self.tick += 1;
        Ok(())
    }

    /// Steps until the clock reaches `t_end` (rounded to whole ticks).
    pub fn run_until(&mut self, t_end: f64) -> Result<(), SimError> {
        let target = (t_end / self.dt).round() as u64;
        while self.tick < target {
            self.step()?;
        }
        Ok(())
    }

    fn guidance_step(&mut self, t: f64) -> Result<(), SimError> {
        let round = self.counts.guidance;
        if let Guidance::Formation(fg) = &self.guidance {
            let fg = fg.clone();
            lock(&self.net).advance_to(t)?;
            let payloads: Vec<Option<Vec<u8>>> = self
                .agents
                .iter()
                .map(|a| (a.status == AgentStatus::Flying).then(|| a.neighbor_state().encode()))
                .collect();
            let net = &self.net;
            let send = |(i, p): (usize, &Option<Vec<u8>>)| -> Result<(), SimError> {
                if let Some(bytes) = p {
                    lock(net).exchange_send(AgentId(i), bytes, round)?;
                }
                Ok(())
            };
            if self.concurrent() {
                payloads.par_iter().enumerate().try_for_each(send)?;
            } else {
                payloads.iter().enumerate().try_for_each(send)?;
            }
            let update = |a: &mut Agent| -> Result<(), SimError> {
                let got = lock(net).exchange_collect(a.id, round)?;
                for (from, bytes) in got {
                    a.cache.insert(from, (t, NeighborState::decode(&bytes)?));
                }
                a.cache
                    .retain(|_, (stamp, _)| t - *stamp <= fg.staleness + STALE_EPS);
                formation_setpoint(a, &fg, t)
            };
            if self.concurrent() {
                self.agents.par_iter_mut().try_for_each(update)?;
            } else {
                self.agents.iter_mut().try_for_each(update)?;
            }
            return Ok(());
        }
        for a in self.agents.iter_mut() {
            a.setpoint = reference_setpoint(a, t);
        }
        Ok(())
    }

    fn control_step(&mut self, t: f64) -> Result<(), SimError> {
        let params = self.config.params;
        let gains = self.config.gains;
        let di =
            matches!(&self.guidance, Guidance::Formation(f) if f.plant == Plant::DoubleIntegrator);
        let step = |a: &mut Agent| -> Result<(), SimError> {
            if a.status == AgentStatus::Shutdown {
                a.command = CommandFPQR::zero();
                a.di_accel = params.gravity * world_z();
                return Ok(());
            }
            if di {
                let acc = if a.setpoint.is_full_state() {
                    full_state_command_acceleration(&a.state, &a.setpoint, &gains).map_err(
                        |source| SimError::Control {
                            agent: a.id,
                            time: t,
                            source,
                        },
                    )?
                } else {
                    a.setpoint.acceleration
                };
                a.di_accel = acc;
                a.command = CommandFPQR::new(
                    params.mass * (params.gravity * world_z() - acc).norm(),
                    Vec3::zeros(),
                );
                return Ok(());
            }
            a.command = match hierarchical_step(&a.state, &a.setpoint, &gains, &params) {
                Ok(c) => c,
                Err(ControlError::DegenerateThrustDirection(_)) => CommandFPQR::zero(),
                Err(source) => {
                    return Err(SimError::Control {
                        agent: a.id,
                        time: t,
                        source,
                    })
                }
            };
            Ok(())
        };
        if self.concurrent() {
            self.agents.par_iter_mut().try_for_each(step)
        } else {
            self.agents.iter_mut().try_for_each(step)
        }
    }

    fn physics_step(&mut self, t: f64) -> Result<(), SimError> {
        let params = self.config.params;
        let dt = self.dt;
        let di =
            matches!(&self.guidance, Guidance::Formation(f) if f.plant == Plant::DoubleIntegrator);
        let step = |a: &mut Agent| -> Result<(), SimError> {
            if a.status == AgentStatus::Shutdown {
                // latched: no thrust regardless of the control schedule
                a.command = CommandFPQR::zero();
                a.di_accel = params.gravity * world_z();
            }
            let next = if di {
                di_step(&a.state, &a.di_accel, dt)
            } else {
                rk4_step(&a.state, &a.command, &params, dt).map_err(|_| non_finite(a, t))?
            };
            if !next.is_finite() {
                return Err(non_finite(a, t));
            }
            a.state = next;
            Ok(())
        };
        if self.concurrent() {
            self.agents.par_iter_mut().try_for_each(step)
        } else {
            self.agents.iter_mut().try_for_each(step)
        }
    }

    fn geofence_step(&mut self, t: f64) {
        let fence = self.config.geofence;
        for a in self.agents.iter_mut() {
            if a.status == AgentStatus::Flying && !fence.contains(&a.state.position) {
                warn!("{} left the geofence at t = {t:.3}; shutting down", a.id);
                a.status = AgentStatus::Shutdown;
                a.shutdown_time = Some(t);
                a.operator = None;
            }
        }
    }

    fn track_visits(&mut self) {
        if let Some((_, visits)) = &mut self.routing {
            for v in visits.iter_mut() {
                let d = (self.agents[v.agent.0].state.position - v.point).norm();
                v.min_distance = v.min_distance.min(d);
            }
        }
    }

    fn log_step(&mut self, t: f64) -> Result<(), SimError> {
        let Some(log) = &mut self.log else {
            return Ok(());
        };
        for a in &self.agents {
            log.write(&FlightLogRecord {
                tick: self.tick,
                time: t,
                agent: a.id,
                state: a.state,
                command: a.command,
                guidance_acceleration: a.setpoint.acceleration,
                reference: a.setpoint.position,
                status: a.status,
            })?;
        }
        Ok(())
    }

    /// Closes the log, writes its metadata and summarizes the run.
    pub fn finish(mut self) -> Result<RunSummary, SimError> {
        let (log_path, meta_path, records) = match self.log.take() {
            Some(log) => {
                let records = log.records();
                let path = log.finish()?;
                let meta = LogMetadata {
                    scenario: self.config.name.clone(),
                    seed: self.config.seed,
                    config_digest: self.config.digest(),
                    schema_version: self.config.schema_version,
                    physics_hz: self.config.rates.physics_hz,
                    ticks: self.tick,
                    records,
                    engine_version: env!("CARGO_PKG_VERSION").to_string(),
                };
                let meta_path = write_metadata(&path, &meta)?;
                (Some(path), Some(meta_path), records)
            }
            None => (None, None, 0),
        };
        let routing = self.routing.as_ref().map(|(plan, visits)| RoutingReport {
            solver: match &self.config.guidance {
                GuidanceConfig::Pdvrp(p) => p.solver,
                _ => Solver::Exact,
            },
            cost: plan.total_cost,
            routes: plan.orders(),
            visits: visits.clone(),
            max_visit_error: visits.iter().map(|v| v.min_distance).fold(0.0, f64::max),
        });
        Ok(RunSummary {
            scenario: self.config.name.clone(),
            seed: self.config.seed,
            guidance: self.config.guidance.name().to_string(),
            final_time: self.time(),
            ticks: self.counts,
            agents: self
                .agents
                .iter()
                .map(|a| AgentSummary {
                    id: a.id,
                    position: a.state.position,
                    velocity: a.state.velocity,
                    attitude: a.state.attitude,
                    status: a.status,
                    role: a.role,
                    shutdown_time: a.shutdown_time,
                })
                .collect(),
            shutdowns: self
                .agents
                .iter()
                .filter(|a| a.status == AgentStatus::Shutdown)
                .count(),
            formation_error: self.formation_error(),
            routing,
            network: self.network_stats().into(),
            log_path,
            meta_path,
            log_records: records,
        })
    }
}

fn formation_guidance(f: &FormationConfig) -> Result<FormationGuidance, SimError> {
    Ok(FormationGuidance {
        spec: f.bearing_spec()?,
        kp: f.kp,
        kv: f.kv,
        plant: f.plant,
        staleness: f.staleness,
    })
}

fn non_finite(a: &Agent, t: f64) -> SimError {
    SimError::NonFinite {
        agent: a.id,
        time: t,
        snapshot: format!(
            "position {:?} velocity {:?} attitude {:?} command thrust {} rates {:?}",
            a.state.position.as_slice(),
            a.state.velocity.as_slice(),
            a.state.attitude.as_slice(),
            a.command.thrust,
            a.command.rates.as_slice()
        ),
    }
}

/// Exact zero-order-hold update of a point mass.
fn di_step(s: &QuadState, a: &Vec3, dt: f64) -> QuadState {
    QuadState {
        position: s.position + s.velocity * dt + 0.5 * a * dt * dt,
        velocity: s.velocity + a * dt,
        attitude: s.attitude,
    }
}

/// Operator plan, then scenario plan, then hold.
fn reference_setpoint(a: &Agent, t: f64) -> FlatSetpoint {
    if let Some(s) = a.active_spline(t) {
        return s.sample(t);
    }
    FlatSetpoint::hold(a.hold.0, a.hold.1)
}

fn formation_setpoint(a: &mut Agent, fg: &FormationGuidance, t: f64) -> Result<(), SimError> {
    if a.status == AgentStatus::Shutdown {
        return Ok(());
    }
    if a.operator.is_some() || !a.guidance_enabled {
        a.setpoint = reference_setpoint(a, t);
        return Ok(());
    }
    if a.role == Role::Leader {
        a.setpoint = match fg.plant {
            Plant::DoubleIntegrator => FlatSetpoint::acceleration(Vec3::zeros(), a.hold.1),
            Plant::Quadrotor => FlatSetpoint::hold(a.hold.0, a.hold.1),
        };
        return Ok(());
    }
    let neighbors: BTreeMap<AgentId, NeighborState> = a
        .cache
        .iter()
        .filter(|(j, _)| fg.spec.edges.contains_key(&(a.id.0, j.0)))
        .map(|(&j, (_, s))| (j, *s))
        .collect();
    let u = bearing_control_input(
        &a.neighbor_state(),
        &neighbors,
        &fg.spec,
        a.id,
        fg.kp,
        fg.kv,
    )?;
    debug!("{} formation input {:?}", a.id, u.as_slice());
    a.setpoint = FlatSetpoint::acceleration(u, a.hold.1);
    Ok(())
}

/// Loads nothing from disk: runs `config` to `until` (or its duration).
pub fn run_scenario(config: &ScenarioConfig, until: Option<f64>) -> Result<RunSummary, SimError> {
    let mut sim = Simulation::new(config.clone())?;
    sim.run_until(until.unwrap_or(config.duration))?;
    sim.finish()
}
