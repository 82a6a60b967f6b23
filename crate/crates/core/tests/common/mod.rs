//! Scenario builders shared by the integration tests.
#![allow(dead_code)]

use nanoswarm::formation::grid_positions;
use nanoswarm::orchestrator::{
    AgentConfig, FormationConfig, Geofence, GridShape, GuidanceConfig, PdvrpConfig, Plant,
    ScenarioConfig, Solver, SCHEMA_VERSION,
};
use nanoswarm::tasking::Task;
use nanoswarm::Vec3;

pub fn base_config(name: &str, agents: Vec<Vec3>, duration: f64) -> ScenarioConfig {
    let toml = format!(
        "schema_version = {SCHEMA_VERSION}\nname = \"{name}\"\nduration = {duration:?}\nagents = []\n\
         [geofence]\nmin = [-10.0, -10.0, -5.0]\nmax = [10.0, 10.0, 5.0]\n"
    );
    let mut cfg: ScenarioConfig = toml::from_str(&toml).unwrap();
    cfg.agents = agents.into_iter().map(AgentConfig::at).collect();
    cfg
}

pub fn hover_config() -> ScenarioConfig {
    base_config("hover", vec![Vec3::new(0.0, 0.0, 1.0)], 10.0)
}

/// Two static leaders at the bottom edge of a unit square and two followers
/// starting away from their corners.
pub fn square_formation(plant: Plant, drop_probability: f64, duration: f64) -> ScenarioConfig {
    let agents = vec![
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(1.0, 0.0, 1.0),
        Vec3::new(-0.4, 1.5, 1.3),
        Vec3::new(1.6, 0.7, 0.8),
    ];
    let mut cfg = base_config("square-formation", agents, duration);
    cfg.seed = 7;
    cfg.network.drop_probability = drop_probability;
    cfg.guidance = GuidanceConfig::Formation(FormationConfig {
        kp: 1.2,
        kv: 1.8,
        leaders: vec![0, 1],
        plant,
        staleness: 0.1,
        grid: Some(GridShape {
            rows: 2,
            cols: 2,
            spacing: 1.0,
        }),
        target_positions: None,
        edges: None,
        bearings: None,
    });
    cfg
}

pub const GRID_ROWS: usize = 5;
pub const GRID_COLS: usize = 6;
pub const GRID_SPACING: f64 = 0.6;

/// 30 quadrotors around a 5x6 grid, leaders at opposite corners.
pub fn grid_formation(duration: f64) -> ScenarioConfig {
    let origin = Vec3::new(-1.5, -1.2, 1.5);
    let targets = grid_positions(GRID_ROWS, GRID_COLS, GRID_SPACING, origin);
    let n = targets.len();
    let agents = targets
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if k == 0 || k == n - 1 {
                return *p;
            }
            // deterministic scatter of up to 0.25 m per axis
            let f = |s: f64| 0.25 * ((k as f64 * s).sin());
            p + Vec3::new(f(1.7), f(2.3), 0.6 * f(3.1))
        })
        .collect();
    let mut cfg = base_config("grid-30", agents, duration);
    cfg.seed = 30;
    cfg.geofence = Geofence {
        min: Vec3::new(-4.0, -4.0, -1.0),
        max: Vec3::new(4.0, 4.0, 4.0),
    };
    cfg.guidance = GuidanceConfig::Formation(FormationConfig {
        kp: 1.2,
        kv: 1.8,
        leaders: vec![0, n - 1],
        plant: Plant::Quadrotor,
        staleness: 0.1,
        grid: Some(GridShape {
            rows: GRID_ROWS,
            cols: GRID_COLS,
            spacing: GRID_SPACING,
        }),
        target_positions: None,
        edges: None,
        bearings: None,
    });
    cfg
}

/// Grid target consistent with the two corner leaders' actual positions.
pub fn grid_consistent_positions(leader_first: Vec3, leader_last: Vec3) -> Vec<Vec3> {
    let unit = grid_positions(GRID_ROWS, GRID_COLS, 1.0, Vec3::zeros());
    let span = unit[unit.len() - 1];
    let scale = (leader_last - leader_first).norm() / span.norm();
    unit.iter().map(|u| leader_first + u * scale).collect()
}

/// Six vehicles and six deliveries spread over a 4 m x 4 m floor.
pub fn pdvrp_flight(solver: Solver) -> ScenarioConfig {
    let starts: Vec<Vec3> = (0..6)
        .map(|k| Vec3::new(-1.5 + 0.6 * k as f64, -1.8, 1.0))
        .collect();
    let mut cfg = base_config("pdvrp-6", starts, 40.0);
    cfg.seed = 6;
    cfg.geofence = Geofence {
        min: Vec3::new(-3.0, -3.0, -0.5),
        max: Vec3::new(3.0, 3.0, 2.5),
    };
    let t = |px: f64, py: f64, dx: f64, dy: f64, load: f64| Task {
        pickup: Vec3::new(px, py, 0.0),
        delivery: Vec3::new(dx, dy, 0.0),
        load,
    };
    cfg.guidance = GuidanceConfig::Pdvrp(PdvrpConfig {
        solver,
        cruise_altitude: 1.0,
        time_per_meter: 2.5,
        capacities: vec![1.0, 1.0, 0.5, 0.5, 1.0, 0.5],
        tasks: vec![
            t(-1.2, -0.5, -1.5, 1.5, 0.8),
            t(0.0, -0.8, 0.5, 1.2, 0.4),
            t(1.4, -1.0, 1.8, 0.9, 0.3),
            t(-0.6, 0.3, 0.9, 1.8, 0.9),
            t(0.8, 0.0, -0.4, 1.6, 0.5),
            t(1.6, 0.4, 0.2, 0.6, 0.2),
        ],
        rounds_per_phase: None,
    });
    cfg
}
