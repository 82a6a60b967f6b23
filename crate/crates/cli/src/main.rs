//! `nanoswarm` command-line tool.
//!
//! Results are printed to stdout as JSON. Failures print a single JSON
//! object `{"error": <kind>, "message": <text>}` to stderr and exit nonzero:
//! 2 for bad input (config, instance or waypoint files), 1 for runtime
//! failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nanoswarm::netsim::{Network, QosProfile, TopologyGraph};
use nanoswarm::orchestrator::{
    load_scenario, run_scenario, ConfigError, ScenarioConfig, SimError, Simulation,
};
use nanoswarm::planning::{interpolate_waypoints, PlanningError, Waypoint};
use nanoswarm::tasking::{
    greedy_allocate_distributed, solve_exact, GreedyOptions, PdvrpInstance, TaskingError,
};
use nanoswarm_gateway::{start, GatewayError, GatewayOptions};
use serde_json::json;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "nanoswarm", version, about = "Nano-quadrotor swarm simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print its summary.
    Run {
        scenario: PathBuf,
        /// Simulated end time in seconds (defaults to the scenario duration).
        #[arg(long)]
        until: Option<f64>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the log to DIR/<scenario name>.csv instead of the configured path.
        #[arg(long, value_name = "DIR")]
        log: Option<PathBuf>,
        /// Do not write a log.
        #[arg(long, conflicts_with = "log")]
        no_log: bool,
        /// Serve the operator gateway while running in real time.
        #[arg(long)]
        gateway: bool,
        /// Gateway port (0 picks a free port).
        #[arg(long, requires = "gateway")]
        port: Option<u16>,
        /// Simulated seconds per wall-clock second while serving.
        #[arg(long, requires = "gateway")]
        realtime: Option<f64>,
    },
    /// Check a scenario file and print its normalized form.
    Validate { scenario: PathBuf },
    /// Solve a pickup-and-delivery instance given as JSON.
    SolvePdvrp {
        instance: PathBuf,
        /// Use the distributed greedy auction instead of the exact solver.
        #[arg(long)]
        greedy: bool,
    },
    /// Fit a spline through JSON waypoints and write samples as CSV.
    Plan {
        waypoints: PathBuf,
        /// Output CSV (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Samples per second.
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Tasking(#[from] TaskingError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Sim(SimError::Config(_)) => "config",
            CliError::Sim(_) => "simulation",
            CliError::Gateway(_) => "gateway",
            CliError::Tasking(_) => "tasking",
            CliError::Planning(_) => "planning",
            CliError::Read { .. } | CliError::Json { .. } => "input",
            CliError::Usage(_) => "usage",
            CliError::Io(_) | CliError::Csv(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" | "input" | "usage" => 2,
            _ => 1,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn print_json(v: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("serializable output")
    );
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: &Path,
    until: Option<f64>,
    seed: Option<u64>,
    log_dir: Option<PathBuf>,
    no_log: bool,
    gateway: bool,
    port: Option<u16>,
    realtime: Option<f64>,
) -> Result<(), CliError> {
    let mut cfg: ScenarioConfig = load_scenario(scenario)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if no_log {
        cfg.log.path = None;
    } else if let Some(dir) = log_dir {
        fs::create_dir_all(&dir)?;
        cfg.log.path = Some(dir.join(format!("{}.csv", cfg.name)));
    }
    if let Some(t) = until {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CliError::Usage(format!("--until must be >= 0, got {t}")));
        }
    }
    cfg.validate()?;

    let summary = if gateway || cfg.gateway.enabled {
        let mut opts = GatewayOptions::from_config(&cfg, until);
        if let Some(p) = port {
            opts.addr.set_port(p);
        }
        if let Some(r) = realtime {
            opts.realtime_factor = r;
        }
        let sim = Simulation::new(cfg)?;
        let runtime = tokio::runtime::Runtime::new()?;
        let sim = runtime.block_on(async {
            let gw = start(sim, opts).await?;
            eprintln!(
                "{}",
                json!({ "event": "listening", "addr": gw.local_addr().to_string() })
            );
            gw.finish().await
        })?;
        sim.finish()?
    } else {
        run_scenario(&cfg, until)?
    };
    print_json(&summary);
    Ok(())
}

fn solve(instance: &Path, greedy: bool) -> Result<(), CliError> {
    let inst: PdvrpInstance = read_json(instance)?;
    inst.validate()?;
    let plan = if greedy {
        let n = inst.vehicles.len();
        let mut net = Network::with_static(TopologyGraph::complete(n), QosProfile::reliable())
            .map_err(TaskingError::from)?;
        greedy_allocate_distributed(&mut net, &inst, GreedyOptions::default())?
    } else {
        solve_exact(&inst)?
    };
    print_json(&json!({
        "solver": if greedy { "greedy" } else { "exact" },
        "cost": plan.total_cost,
        "routes": plan.orders(),
    }));
    Ok(())
}

fn plan(waypoints: &Path, out: Option<PathBuf>, rate: f64) -> Result<(), CliError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(CliError::Usage(format!(
            "--rate must be positive, got {rate}"
        )));
    }
    let points: Vec<Waypoint> = read_json(waypoints)?;
    let spline = interpolate_waypoints(&points)?;
    let sink: Box<dyn std::io::Write> = match &out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw",
    ])?;
    let n = (spline.duration() * rate).round() as u64;
    for k in 0..=n {
        let t = (spline.start_time() + k as f64 / rate).min(spline.end_time());
        let s = spline.sample_full(t);
        let row = [
            t,
            s.position.x,
            s.position.y,
            s.position.z,
            s.velocity.x,
            s.velocity.y,
            s.velocity.z,
            s.acceleration.x,
            s.acceleration.y,
            s.acceleration.z,
            s.yaw,
        ];
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            until,
            seed,
            log,
            no_log,
            gateway,
            port,
            realtime,
        } => run(&scenario, until, seed, log, no_log, gateway, port, realtime),
        Command::Validate { scenario } => {
            load_scenario(&scenario).map_err(CliError::from).map(|cfg| {
                print_json(&json!({
                    "valid": true,
                    "name": cfg.name,
                    "agents": cfg.n_agents(),
                    "guidance": cfg.guidance.name(),
                    "digest": cfg.digest(),
                }))
            })
        }
        Command::SolvePdvrp { instance, greedy } => solve(&instance, greedy),
        Command::Plan {
            waypoints,
            out,
            rate,
        } => plan(&waypoints, out, rate),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code())
        }
    }
}
