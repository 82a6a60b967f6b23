//! Scenario configuration, read from TOML.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::ControlGains;
use crate::dynamics::{QuadParams, Vec3};
use crate::formation::{grid_formation_spec, BearingSpec};
use crate::netsim::{QosProfile, TopologyGraph};
use crate::planning::Waypoint;
use crate::tasking::{PdvrpInstance, Task, Vehicle};

pub const SCHEMA_VERSION: u32 = 1;

/// Slack for checking that rates divide evenly.
const RATE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

impl ConfigError {
    fn invalid(path: impl fmt::Display, reason: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub execution: ExecutionMode,
    #[serde(default = "default_hover_altitude")]
    pub hover_altitude: f64,
    /// Enable guidance at t = 0; otherwise agents hold until a `start` command.
    #[serde(default = "yes")]
    pub autostart: bool,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub params: QuadParams,
    #[serde(default)]
    pub gains: ControlGains,
    pub geofence: Geofence,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub log: LogConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_hover_altitude() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    /// Agents step one after another in id order.
    #[default]
    Lockstep,
    /// Agents step on a thread pool, one task per agent per phase.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub physics_hz: f64,
    pub control_hz: f64,
    pub guidance_hz: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            physics_hz: 100.0,
            control_hz: 100.0,
            guidance_hz: 100.0,
        }
    }
}

impl Rates {
    pub fn dt(&self) -> f64 {
        1.0 / self.physics_hz
    }

    fn divisor(&self, hz: f64) -> Option<u64> {
        let ratio = self.physics_hz / hz;
        let k = ratio.round();
        ((ratio - k).abs() <= RATE_TOL * ratio && k >= 1.0).then_some(k as u64)
    }

    /// Physics ticks per control tick.
    pub fn control_divisor(&self) -> u64 {
        self.divisor(self.control_hz).unwrap_or(1)
    }

    /// Physics ticks per guidance tick.
    pub fn guidance_divisor(&self) -> u64 {
        self.divisor(self.guidance_hz).unwrap_or(1)
    }
}

/// Closed axis-aligned keep-in box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geofence {
    pub min: Vec3,
    pub max: Vec3,
}

impl Geofence {
    /// Points on a face count as inside.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub position: Vec3,
    #[serde(default = "Vec3::zeros")]
    pub velocity: Vec3,
    #[serde(default)]
    pub yaw: f64,
}

impl AgentConfig {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            yaw: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Zero means reliable.
    pub drop_probability: f64,
    pub latency: f64,
    /// Explicit graph; derived from the guidance mode when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_neighbors: Option<Vec<Vec<usize>>>,
}

impl NetworkConfig {
    pub fn qos(&self, seed: u64) -> QosProfile {
        let base = if self.drop_probability > 0.0 {
            QosProfile::lossy(self.drop_probability, seed)
        } else {
            QosProfile {
                seed,
                ..QosProfile::reliable()
            }
        };
        base.with_latency(self.latency)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GuidanceConfig {
    /// Every agent holds its initial position.
    #[default]
    Idle,
    Formation(FormationConfig),
    Pdvrp(PdvrpConfig),
    Trajectory(TrajectoryConfig),
}

impl GuidanceConfig {
    pub fn name(&self) -> &'static str {
        match self {
            GuidanceConfig::Idle => "idle",
            GuidanceConfig::Formation(_) => "formation",
            GuidanceConfig::Pdvrp(_) => "pdvrp",
            GuidanceConfig::Trajectory(_) => "trajectory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plant {
    /// Point masses driven directly by the formation acceleration.
    #[default]
    DoubleIntegrator,
    /// Full quadrotors tracking the formation acceleration.
    Quadrotor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BearingEntry {
    pub from: usize,
    pub to: usize,
    pub bearing: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationConfig {
    pub kp: f64,
    pub kv: f64,
    pub leaders: Vec<usize>,
    #[serde(default)]
    pub plant: Plant,
    /// Longest age of a cached neighbor state before it is skipped, s.
    #[serde(default = "default_staleness")]
    pub staleness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_positions: Option<Vec<Vec3>>,
    /// `[i, j]`: agent `i` uses agent `j`; required with `target_positions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearings: Option<Vec<BearingEntry>>,
}

fn default_staleness() -> f64 {
    0.1
}

impl FormationConfig {
    pub fn leader_set(&self) -> BTreeSet<usize> {
        self.leaders.iter().copied().collect()
    }

    pub fn bearing_spec(&self) -> Result<BearingSpec, ConfigError> {
        let leaders = self.leader_set();
        let shapes = [
            self.grid.is_some(),
            self.target_positions.is_some(),
            self.bearings.is_some(),
        ];
        if shapes.iter().filter(|&&s| s).count() != 1 {
            return Err(ConfigError::invalid(
                "guidance",
                "exactly one of `grid`, `target_positions` or `bearings` is required",
            ));
        }
        let spec = if let Some(g) = &self.grid {
            grid_formation_spec(g.rows, g.cols, g.spacing, &leaders)
        } else if let Some(targets) = &self.target_positions {
            let Some(edges) = &self.edges else {
                return Err(ConfigError::invalid(
                    "guidance.edges",
                    "required with target_positions",
                ));
            };
            let edges: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
            BearingSpec::from_positions(targets, &edges, leaders)
        } else {
            let entries = self.bearings.as_deref().unwrap_or_default();
            let edges = entries
                .iter()
                .map(|b| ((b.from, b.to), b.bearing))
                .collect();
            BearingSpec::new(edges, leaders)
        };
        spec.map_err(|e| ConfigError::invalid("guidance", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Exact,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdvrpConfig {
    #[serde(default)]
    pub solver: Solver,
    pub cruise_altitude: f64,
    /// Knot spacing, seconds per meter of leg.
    pub time_per_meter: f64,
    /// One per agent.
    pub capacities: Vec<f64>,
    pub tasks: Vec<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_per_phase: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPlan {
    pub agent: usize,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    #[serde(default)]
    pub plans: Vec<AgentPlan>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogConfig {
    /// CSV destination; a `.meta.json` sidecar is written next to it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub enabled: bool,
    pub port: u16,
    /// State frames per simulated second.
    pub stream_hz: f64,
    /// Simulated seconds per wall-clock second while hosting the gateway.
    pub realtime_factor: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            port: 8765,
            stream_hz: 20.0,
            realtime_factor: 1.0,
        }
    }
}

fn check_vec(path: impl fmt::Display, v: &Vec3) -> Result<(), ConfigError> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, "must be finite"))
    }
}

fn check_positive(path: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(
            path,
            format!("must be positive, got {x}"),
        ))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form. The log destination and gateway
    /// settings do not change the simulated result and are left out.
    pub fn digest(&self) -> String {
        let inputs = Self {
            log: LogConfig::default(),
            gateway: GatewayConfig::default(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(inputs.to_toml_string().as_bytes()))
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Checks every invariant, reporting the first failure with its field path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        check_positive("duration", self.duration)?;
        if !self.hover_altitude.is_finite() {
            return Err(ConfigError::invalid("hover_altitude", "must be finite"));
        }
        let r = &self.rates;
        check_positive("rates.physics_hz", r.physics_hz)?;
        check_positive("rates.control_hz", r.control_hz)?;
        check_positive("rates.guidance_hz", r.guidance_hz)?;
        if r.control_hz > r.physics_hz {
            return Err(ConfigError::invalid(
                "rates.control_hz",
                "must not exceed physics_hz",
            ));
        }
        if r.guidance_hz > r.physics_hz {
            return Err(ConfigError::invalid(
                "rates.guidance_hz",
                "must not exceed physics_hz",
            ));
        }
        if r.divisor(r.control_hz).is_none() {
            return Err(ConfigError::invalid(
                "rates.control_hz",
                "must divide physics_hz",
            ));
        }
        if r.divisor(r.guidance_hz).is_none() {
            return Err(ConfigError::invalid(
                "rates.guidance_hz",
                "must divide physics_hz",
            ));
        }
        self.params
            .validate()
            .map_err(|e| ConfigError::invalid("params", e.to_string()))?;
        if !self.gains.is_valid() {
            return Err(ConfigError::invalid(
                "gains",
                "gains must be positive and finite",
            ));
        }
        check_vec("geofence.min", &self.geofence.min)?;
        check_vec("geofence.max", &self.geofence.max)?;
        for (k, axis) in ["x", "y", "z"].iter().enumerate() {
            if self.geofence.min[k] >= self.geofence.max[k] {
                return Err(ConfigError::invalid(
                    format!("geofence.min.{axis}"),
                    "must be below geofence.max",
                ));
            }
        }
        if self.agents.is_empty() {
            return Err(ConfigError::invalid(
                "agents",
                "at least one agent is required",
            ));
        }
        for (i, a) in self.agents.iter().enumerate() {
            check_vec(format!("agents[{i}].position"), &a.position)?;
            check_vec(format!("agents[{i}].velocity"), &a.velocity)?;
            if !a.yaw.is_finite() {
                return Err(ConfigError::invalid(
                    format!("agents[{i}].yaw"),
                    "must be finite",
                ));
            }
            if !self.geofence.contains(&a.position) {
                return Err(ConfigError::invalid(
                    format!("agents[{i}].position"),
                    format!("agent {i} starts outside the geofence"),
                ));
            }
        }
        let n = self.n_agents();
        self.network
            .qos(self.seed)
            .validate()
            .map_err(|e| ConfigError::invalid("network", e.to_string()))?;
        if let Some(lists) = &self.network.in_neighbors {
            if lists.len() != n {
                return Err(ConfigError::invalid(
                    "network.in_neighbors",
                    format!("{} lists for {n} agents", lists.len()),
                ));
            }
            TopologyGraph::from_in_neighbors(lists.clone())
                .map_err(|e| ConfigError::invalid("network.in_neighbors", e.to_string()))?;
        }
        self.validate_guidance()?;
        let gw = &self.gateway;
        check_positive("gateway.stream_hz", gw.stream_hz)?;
        check_positive("gateway.realtime_factor", gw.realtime_factor)?;
        Ok(())
    }

    fn validate_guidance(&self) -> Result<(), ConfigError> {
        let n = self.n_agents();
        match &self.guidance {
            GuidanceConfig::Idle => Ok(()),
            GuidanceConfig::Formation(f) => {
                check_positive("guidance.kp", f.kp)?;
                check_positive("guidance.kv", f.kv)?;
                check_positive("guidance.staleness", f.staleness)?;
                if f.leaders.is_empty() {
                    return Err(ConfigError::invalid(
                        "guidance.leaders",
                        "at least one leader is required",
                    ));
                }
                if let Some(k) = f.leaders.iter().position(|&l| l >= n) {
                    return Err(ConfigError::invalid(
                        format!("guidance.leaders[{k}]"),
                        "unknown agent",
                    ));
                }
                if let Some(g) = &f.grid {
                    if g.rows * g.cols != n {
                        return Err(ConfigError::invalid(
                            "guidance.grid",
                            format!("{}x{} grid for {n} agents", g.rows, g.cols),
                        ));
                    }
                }
                let spec = f.bearing_spec()?;
                if spec.max_agent().is_some_and(|m| m >= n) {
                    return Err(ConfigError::invalid(
                        "guidance",
                        "bearing refers to an unknown agent",
                    ));
                }
                if let Some(lists) = &self.network.in_neighbors {
                    let graph = TopologyGraph::from_in_neighbors(lists.clone())
                        .map_err(|e| ConfigError::invalid("network.in_neighbors", e.to_string()))?;
                    for &(i, j) in spec.edges.keys() {
                        if !graph.has_edge(j.into(), i.into()) {
                            return Err(ConfigError::invalid(
                                "network.in_neighbors",
                                format!(
                                    "agent {i} uses agent {j} but the graph has no edge {j} -> {i}"
                                ),
                            ));
                        }
                    }
                }
                Ok(())
            }
            GuidanceConfig::Pdvrp(p) => {
                check_positive("guidance.time_per_meter", p.time_per_meter)?;
                if !p.cruise_altitude.is_finite() {
                    return Err(ConfigError::invalid(
                        "guidance.cruise_altitude",
                        "must be finite",
                    ));
                }
                if p.capacities.len() != n {
                    return Err(ConfigError::invalid(
                        "guidance.capacities",
                        format!("{} capacities for {n} agents", p.capacities.len()),
                    ));
                }
                self.pdvrp_instance(p)
                    .map(|_| ())
                    .map_err(|e| ConfigError::invalid("guidance.tasks", e.to_string()))
            }
            GuidanceConfig::Trajectory(t) => {
                let mut seen = BTreeSet::new();
                for (k, plan) in t.plans.iter().enumerate() {
                    if plan.agent >= n {
                        return Err(ConfigError::invalid(
                            format!("guidance.plans[{k}].agent"),
                            "unknown agent",
                        ));
                    }
                    if !seen.insert(plan.agent) {
                        return Err(ConfigError::invalid(
                            format!("guidance.plans[{k}].agent"),
                            "agent already has a plan",
                        ));
                    }
                    crate::planning::interpolate_waypoints(&plan.waypoints).map_err(|e| {
                        ConfigError::invalid(
                            format!("guidance.plans[{k}].waypoints"),
                            e.to_string(),
                        )
                    })?;
                }
                Ok(())
            }
        }
    }

    /// Routing instance with one vehicle per agent starting at its initial position.
    pub fn pdvrp_instance(
        &self,
        p: &PdvrpConfig,
    ) -> Result<PdvrpInstance, crate::tasking::TaskingError> {
        let vehicles = self
            .agents
            .iter()
            .zip(&p.capacities)
            .map(|(a, &capacity)| Vehicle {
                start: a.position,
                capacity,
            })
            .collect();
        PdvrpInstance::new(vehicles, p.tasks.clone())
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOVER: &str = r#"
schema_version = 1
duration = 10.0

[geofence]
min = [-2.0, -2.0, -1.0]
max = [2.0, 2.0, 3.0]

[[agents]]
position = [0.0, 0.0, 1.0]
"#;

    #[test]
    fn minimal_hover_loads() {
        let cfg = ScenarioConfig::from_toml_str(HOVER).unwrap();
        assert_eq!(cfg.n_agents(), 1);
        assert_eq!(cfg.guidance, GuidanceConfig::Idle);
        assert_eq!(cfg.rates.control_divisor(), 1);
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.digest(), cfg.digest());
    }

    #[test]
    fn digest_ignores_outputs_only() {
        let cfg = ScenarioConfig::from_toml_str(HOVER).unwrap();
        let mut moved = cfg.clone();
        moved.log.path = Some("elsewhere/run.csv".into());
        moved.gateway.port = 9000;
        assert_eq!(moved.digest(), cfg.digest());
        moved.seed += 1;
        assert_ne!(moved.digest(), cfg.digest());
    }

    #[test]
    fn outside_geofence_names_agent() {
        let text = HOVER.replace("[0.0, 0.0, 1.0]", "[0.0, 0.0, 4.0]");
        match ScenarioConfig::from_toml_str(&text) {
            Err(ConfigError::Invalid { path, reason }) => {
                assert_eq!(path, "agents[0].position");
                assert!(reason.contains("agent 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn boundary_start_is_inside() {
        let text = HOVER.replace("[0.0, 0.0, 1.0]", "[2.0, -2.0, 3.0]");
        ScenarioConfig::from_toml_str(&text).unwrap();
    }

    #[test]
    fn rates_must_divide() {
        let text = format!("{HOVER}\n[rates]\nphysics_hz = 100.0\ncontrol_hz = 30.0\n");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().starts_with("rates.control_hz"), "{err}");
        let text = format!("{HOVER}\n[rates]\nphysics_hz = 100.0\ncontrol_hz = 200.0\n");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
        let text = format!(
            "{HOVER}\n[rates]\nphysics_hz = 100.0\ncontrol_hz = 50.0\nguidance_hz = 10.0\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            (cfg.rates.control_divisor(), cfg.rates.guidance_divisor()),
            (2, 10)
        );
    }

    #[test]
    fn unknown_fields_and_versions_rejected() {
        assert!(matches!(
            ScenarioConfig::from_toml_str(&format!("{HOVER}\nbogus = 1\n")),
            Err(ConfigError::Parse(_))
        ));
        let err = ScenarioConfig::from_toml_str(
            &HOVER.replace("schema_version = 1", "schema_version = 9"),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("schema_version"));
    }

    #[test]
    fn formation_graph_must_carry_bearings() {
        let text = r#"
schema_version = 1
duration = 1.0
[geofence]
min = [-5.0, -5.0, -5.0]
max = [5.0, 5.0, 5.0]
[[agents]]
position = [0.0, 0.0, 1.0]
[[agents]]
position = [1.0, 0.0, 1.0]
[network]
in_neighbors = [[], []]
[guidance]
mode = "formation"
kp = 1.0
kv = 1.0
leaders = [0]
target_positions = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]
edges = [[1, 0]]
"#;
        let err = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().starts_with("network.in_neighbors"), "{err}");
        let ok = text.replace("in_neighbors = [[], []]", "in_neighbors = [[], [0]]");
        ScenarioConfig::from_toml_str(&ok).unwrap();
    }
}
