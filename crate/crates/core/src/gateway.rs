//! Operator protocol: JSON state frames out, commands in.
//!
//! Every message carries a `type` discriminator and `schema_version`. The
//! transport lives in the `nanoswarm-gateway` crate; this module defines the
//! messages and applies commands to a [`Simulation`] at a tick boundary.

use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;
use crate::netsim::AgentId;
use crate::orchestrator::{AgentStatus, Role, Simulation};
use crate::planning::{
    point_to_point, polyline_to_waypoints, replan, Polyline, PolynomialSpline, Waypoint,
    DEFAULT_MAX_KNOTS,
};

pub const PROTOCOL_VERSION: u32 = 1;

/// Altitude targeted by `land`, m.
pub const LAND_ALTITUDE: f64 = 0.05;
/// Cruise speed used to time hover, land and transit maneuvers, m/s.
pub const MANEUVER_SPEED: f64 = 0.5;
/// Shortest hover, land or transit maneuver, s.
pub const MIN_MANEUVER_TIME: f64 = 2.0;
/// Goals closer than this count as the same goal, m.
const SAME_GOAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub id: AgentId,
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub status: AgentStatus,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub schema_version: u32,
    pub sim_time: f64,
    pub agents: Vec<AgentFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Hover,
    Land,
    Start,
    Stop,
    DrawTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPayload {
    /// Ground-plane points, world meters.
    pub polyline: Vec<[f64; 2]>,
    pub total_time: f64,
    pub altitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorCommand {
    pub schema_version: u32,
    /// Echoed back in the reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    pub kind: CommandKind,
    pub targets: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<TrajectoryPayload>,
}

impl OperatorCommand {
    pub fn new(kind: CommandKind, targets: Vec<AgentId>) -> Self {
        Self {
            schema_version: PROTOCOL_VERSION,
            request_id: None,
            kind,
            targets,
            payload: None,
        }
    }

    pub fn draw(
        targets: Vec<AgentId>,
        polyline: Vec<[f64; 2]>,
        total_time: f64,
        altitude: f64,
    ) -> Self {
        Self {
            payload: Some(TrajectoryPayload {
                polyline,
                total_time,
                altitude,
            }),
            ..Self::new(CommandKind::DrawTrajectory, targets)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    pub kind: CommandKind,
    pub targets: Vec<AgentId>,
    /// Duration of the maneuver or spline, s, for trajectory-producing commands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Simulated time at which the command took effect.
    pub sim_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    BadSchemaVersion,
    EmptyTargets,
    UnknownAgent,
    AgentShutdown,
    NotStarted,
    MissingPayload,
    PolylineTooShort,
    InvalidTotalTime,
    InvalidAltitude,
    PlanningFailed,
    SimulationEnded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    pub reason: RejectReason,
    pub message: String,
}

impl Rejection {
    pub fn new(request_id: Option<u64>, reason: RejectReason, message: impl Into<String>) -> Self {
        Self {
            schema_version: PROTOCOL_VERSION,
            request_id,
            reason,
            message: message.into(),
        }
    }
}

/// Active configuration summary served at `GET /scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub schema_version: u32,
    pub name: String,
    pub agents: usize,
    pub guidance: String,
    pub duration: f64,
    pub physics_hz: f64,
    pub stream_hz: f64,
    pub geofence_min: Vec3,
    pub geofence_max: Vec3,
    pub leaders: Vec<AgentId>,
}

/// Messages sent by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Ack(Ack),
    Rejection(Rejection),
    Scenario(ScenarioSummary),
}

/// Messages sent by the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(OperatorCommand),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses one client message, mapping failures to rejections.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, Rejection> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Rejection::new(None, RejectReason::Malformed, format!("invalid JSON: {e}")))?;
    let request_id = value.get("request_id").and_then(serde_json::Value::as_u64);
    match value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => {
            return Err(Rejection::new(
                request_id,
                RejectReason::BadSchemaVersion,
                format!("schema_version {v} is not supported (expected {PROTOCOL_VERSION})"),
            ))
        }
        None => {
            return Err(Rejection::new(
                request_id,
                RejectReason::BadSchemaVersion,
                "missing schema_version",
            ))
        }
    }
    serde_json::from_value(value)
        .map_err(|e| Rejection::new(request_id, RejectReason::Malformed, e.to_string()))
}

pub fn state_frame(sim: &Simulation) -> StateFrame {
    StateFrame {
        schema_version: PROTOCOL_VERSION,
        sim_time: sim.time(),
        agents: sim
            .agents
            .iter()
            .map(|a| AgentFrame {
                id: a.id,
                position: a.state.position,
                velocity: a.state.velocity,
                yaw: a.state.yaw(),
                status: a.status,
                role: a.role,
            })
            .collect(),
    }
}

pub fn scenario_summary(sim: &Simulation) -> ScenarioSummary {
    let cfg = sim.config();
    ScenarioSummary {
        schema_version: PROTOCOL_VERSION,
        name: cfg.name.clone(),
        agents: cfg.n_agents(),
        guidance: cfg.guidance.name().into(),
        duration: cfg.duration,
        physics_hz: cfg.rates.physics_hz,
        stream_hz: cfg.gateway.stream_hz,
        geofence_min: cfg.geofence.min,
        geofence_max: cfg.geofence.max,
        leaders: sim
            .agents
            .iter()
            .filter(|a| a.role == Role::Leader)
            .map(|a| a.id)
            .collect(),
    }
}

fn maneuver_time(distance: f64) -> f64 {
    (distance / MANEUVER_SPEED).max(MIN_MANEUVER_TIME)
}

/// Spline from the agent's current reference to `points`, continuous in
/// position, velocity and acceleration with whatever it was following.
fn plan_from_current(
    sim: &Simulation,
    i: usize,
    points: &[Waypoint],
) -> Result<PolynomialSpline, String> {
    let t = sim.time();
    let a = &sim.agents[i];
    let base = match a.active_spline(t) {
        Some(s) if s.end_time() > t => s.clone(),
        Some(s) => {
            let end = s.sample_full(t);
            PolynomialSpline::constant(end.position, end.yaw, t, t + 1.0)
                .map_err(|e| e.to_string())?
        }
        None => PolynomialSpline::constant(a.state.position, a.state.yaw(), t, t + 1.0)
            .map_err(|e| e.to_string())?,
    };
    replan(&base, t, points).map_err(|e| e.to_string())
}

fn goal_plan(sim: &Simulation, i: usize, goal: Vec3) -> Result<PolynomialSpline, String> {
    let a = &sim.agents[i];
    // a repeated command towards the same goal keeps the current plan
    if let Some(op) = &a.operator {
        if (op.sample_full(op.end_time()).position - goal).norm() < SAME_GOAL_TOL {
            return Ok(op.clone());
        }
    }
    let t = sim.time();
    let from = match a.active_spline(t) {
        Some(s) => s.sample_full(t).position,
        None => a.state.position,
    };
    let duration = maneuver_time((goal - from).norm());
    match a.active_spline(t) {
        Some(_) => plan_from_current(sim, i, &[Waypoint::new(goal, a.state.yaw(), t + duration)]),
        None => point_to_point(from, goal, duration)
            .map(|s| s.shifted(t))
            .map_err(|e| e.to_string()),
    }
}

fn draw_plan(
    sim: &Simulation,
    i: usize,
    payload: &TrajectoryPayload,
) -> Result<PolynomialSpline, String> {
    let t = sim.time();
    let polyline = Polyline::Planar(payload.polyline.clone());
    let mut wps = polyline_to_waypoints(
        &polyline,
        payload.total_time,
        payload.altitude,
        DEFAULT_MAX_KNOTS,
    )
    .map_err(|e| e.to_string())?;
    let a = &sim.agents[i];
    let from = match a.active_spline(t) {
        Some(s) => s.sample_full(t).position,
        None => a.state.position,
    };
    let gap = (wps[0].position - from).norm();
    let offset = if gap < 1e-6 {
        // already at the stroke start: the junction replaces the first knot
        wps.remove(0);
        t
    } else {
        t + maneuver_time(gap)
    };
    for w in wps.iter_mut() {
        w.time += offset;
        w.yaw = a.state.yaw();
    }
    plan_from_current(sim, i, &wps)
}

/// Validates and applies `cmd` to every target. Either all targets accept
/// or none is changed.
pub fn handle_command(sim: &mut Simulation, cmd: &OperatorCommand) -> Result<Ack, Rejection> {
    let reject = |reason, msg: String| Rejection::new(cmd.request_id, reason, msg);
    if cmd.schema_version != PROTOCOL_VERSION {
        return Err(reject(
            RejectReason::BadSchemaVersion,
            format!("schema_version {} is not supported", cmd.schema_version),
        ));
    }
    if cmd.targets.is_empty() {
        return Err(reject(
            RejectReason::EmptyTargets,
            "no target agents".into(),
        ));
    }
    for &id in &cmd.targets {
        let Some(a) = sim.agents.get(id.0) else {
            return Err(reject(
                RejectReason::UnknownAgent,
                format!("{id} does not exist"),
            ));
        };
        if a.status == AgentStatus::Shutdown {
            return Err(reject(
                RejectReason::AgentShutdown,
                format!("{id} is shut down"),
            ));
        }
    }
    let t = sim.time();
    let mut plans: Vec<(usize, PolynomialSpline)> = Vec::new();
    match cmd.kind {
        CommandKind::Start | CommandKind::Stop => {
            let enable = cmd.kind == CommandKind::Start;
            for &id in &cmd.targets {
                let a = &mut sim.agents[id.0];
                if !enable {
                    a.hold = (a.state.position, a.state.yaw());
                }
                a.guidance_enabled = enable;
                a.operator = None;
            }
            return Ok(Ack {
                schema_version: PROTOCOL_VERSION,
                request_id: cmd.request_id,
                kind: cmd.kind,
                targets: cmd.targets.clone(),
                duration: None,
                sim_time: t,
            });
        }
        CommandKind::Hover | CommandKind::Land => {
            for &id in &cmd.targets {
                let p = sim.agents[id.0].state.position;
                let z = if cmd.kind == CommandKind::Hover {
                    sim.config().hover_altitude
                } else {
                    LAND_ALTITUDE
                };
                let plan = goal_plan(sim, id.0, Vec3::new(p.x, p.y, z))
                    .map_err(|e| reject(RejectReason::PlanningFailed, e))?;
                plans.push((id.0, plan));
            }
        }
        CommandKind::DrawTrajectory => {
            let Some(payload) = &cmd.payload else {
                return Err(reject(
                    RejectReason::MissingPayload,
                    "draw_trajectory needs a payload".into(),
                ));
            };
            if payload.polyline.len() < 2 {
                return Err(reject(
                    RejectReason::PolylineTooShort,
                    format!(
                        "polyline has {} point(s), need at least 2",
                        payload.polyline.len()
                    ),
                ));
            }
            if !(payload.total_time.is_finite() && payload.total_time > 0.0) {
                return Err(reject(
                    RejectReason::InvalidTotalTime,
                    format!("total_time must be positive, got {}", payload.total_time),
                ));
            }
            if !payload.altitude.is_finite() {
                return Err(reject(
                    RejectReason::InvalidAltitude,
                    "altitude must be finite".into(),
                ));
            }
            if let Some(id) = cmd
                .targets
                .iter()
                .find(|id| !sim.agents[id.0].guidance_enabled)
            {
                return Err(reject(
                    RejectReason::NotStarted,
                    format!("{id} has not been started"),
                ));
            }
            for &id in &cmd.targets {
                let plan = draw_plan(sim, id.0, payload)
                    .map_err(|e| reject(RejectReason::PlanningFailed, e))?;
                plans.push((id.0, plan));
            }
        }
    }
    let duration = plans
        .iter()
        .map(|(_, p)| p.end_time() - t)
        .fold(0.0, f64::max);
    for (i, plan) in plans {
        sim.agents[i].operator = Some(plan);
    }
    Ok(Ack {
        schema_version: PROTOCOL_VERSION,
        request_id: cmd.request_id,
        kind: cmd.kind,
        targets: cmd.targets.clone(),
        duration: Some(duration),
        sim_time: t,
    })
}
