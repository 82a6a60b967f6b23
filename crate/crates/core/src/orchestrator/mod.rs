//! Scenario runner: configuration, the fixed-rate simulation loop, geofence
//! enforcement and flight logs.

mod config;
mod log;
mod sim;

use thiserror::Error;

pub use config::{
    load_scenario, AgentConfig, AgentPlan, BearingEntry, ConfigError, ExecutionMode,
    FormationConfig, GatewayConfig, Geofence, GridShape, GuidanceConfig, LogConfig, NetworkConfig,
    PdvrpConfig, Plant, Rates, ScenarioConfig, Solver, TrajectoryConfig, SCHEMA_VERSION,
};
pub use log::{
    metadata_path, AgentStatus, FlightLogRecord, FlightLogWriter, LogMetadata, Role, CSV_HEADER,
};
pub use sim::{
    run_scenario, AgentSummary, NetworkReport, RoutingReport, RunSummary, Simulation, TickCounts,
    Visit, VisitKind,
};

use crate::control::ControlError;
use crate::formation::FormationError;
use crate::netsim::{AgentId, NetError};
use crate::planning::PlanningError;
use crate::tasking::TaskingError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{agent} state became non-finite at t = {time}: {snapshot}")]
    NonFinite {
        agent: AgentId,
        time: f64,
        snapshot: String,
    },
    #[error("{agent} control failed at t = {time}: {source}")]
    Control {
        agent: AgentId,
        time: f64,
        #[source]
        source: ControlError,
    },
    #[error("network: {0}")]
    Net(#[from] NetError),
    #[error("formation: {0}")]
    Formation(#[from] FormationError),
    #[error("routing: {0}")]
    Tasking(#[from] TaskingError),
    #[error("planning: {0}")]
    Planning(#[from] PlanningError),
    #[error("log: {0}")]
    Io(#[from] std::io::Error),
}
