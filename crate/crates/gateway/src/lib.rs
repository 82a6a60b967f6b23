//! Live operator gateway for a running [`Simulation`].
//!
//! The simulation runs on its own thread at a wall-clock pace set by the
//! realtime factor. Operator commands arrive over the WebSocket at `/ws`, are
//! queued, and are applied between physics ticks, so a step never observes a
//! half-applied command. State frames are published through a watch channel:
//! every connection sees the newest frame, slow clients skip frames, and
//! frame times on one connection only ever increase.
//!
//! `GET /scenario` returns the active scenario summary.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use log::{debug, info, warn};
use nanoswarm::gateway::{
    handle_command, parse_client_message, scenario_summary, state_frame, Ack, ClientMessage,
    OperatorCommand, RejectReason, Rejection, ScenarioSummary, ServerMessage, StateFrame,
};
use nanoswarm::orchestrator::{ScenarioConfig, SimError, Simulation};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid gateway options: {0}")]
    Options(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("simulation thread panicked")]
    Panicked,
    #[error("server error: {0}")]
    Server(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayOptions {
    pub addr: SocketAddr,
    /// State frames per simulated second.
    pub stream_hz: f64,
    /// Simulated seconds per wall-clock second.
    pub realtime_factor: f64,
    /// Simulated time at which the run ends, s.
    pub until: f64,
}

impl GatewayOptions {
    /// Options from the scenario's gateway section, listening on localhost.
    pub fn from_config(cfg: &ScenarioConfig, until: Option<f64>) -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], cfg.gateway.port)),
            stream_hz: cfg.gateway.stream_hz,
            realtime_factor: cfg.gateway.realtime_factor,
            until: until.unwrap_or(cfg.duration),
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        for (name, v) in [
            ("stream_hz", self.stream_hz),
            ("realtime_factor", self.realtime_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GatewayError::Options(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.until.is_finite() && self.until >= 0.0) {
            return Err(GatewayError::Options(format!(
                "until must be >= 0, got {}",
                self.until
            )));
        }
        Ok(())
    }
}

struct Pending {
    cmd: OperatorCommand,
    reply: oneshot::Sender<Result<Ack, Rejection>>,
}

#[derive(Clone)]
struct AppState {
    frames: watch::Receiver<StateFrame>,
    commands: mpsc::UnboundedSender<Pending>,
    scenario: Arc<ScenarioSummary>,
}

/// A gateway serving one simulation. Dropping it without calling
/// [`RunningGateway::finish`] stops the simulation thread.
pub struct RunningGateway {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<Result<Simulation, SimError>>>,
    server: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
    shutdown: Option<oneshot::Sender<()>>,
}

/// Binds the listener, starts the simulation thread and begins serving.
pub async fn start(sim: Simulation, opts: GatewayOptions) -> Result<RunningGateway, GatewayError> {
    opts.validate()?;
    let listener = TcpListener::bind(opts.addr)
        .await
        .map_err(|source| GatewayError::Bind {
            addr: opts.addr,
            source,
        })?;
    let local_addr = listener.local_addr()?;
    info!("gateway listening on {local_addr}");

    let scenario = Arc::new(scenario_summary(&sim));
    let (frames_tx, frames_rx) = watch::channel(state_frame(&sim));
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let stop = Arc::new(AtomicBool::new(false));
    let sim_stop = stop.clone();
    let sim = std::thread::Builder::new()
        .name("nanoswarm-sim".into())
        .spawn(move || sim_loop(sim, opts, frames_tx, cmd_rx, sim_stop))?;

    let app = router(AppState {
        frames: frames_rx,
        commands: cmd_tx,
        scenario,
    });
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await
    });
    Ok(RunningGateway {
        local_addr,
        stop,
        sim: Some(sim),
        server: Some(server),
        shutdown: Some(shutdown_tx),
    })
}

impl RunningGateway {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Asks the simulation to end after the current tick.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    /// Waits for the simulation to reach its end time (or a stop request),
    /// closes every connection and returns the simulation for summarizing.
    pub async fn finish(mut self) -> Result<Simulation, GatewayError> {
        let handle = self.sim.take().expect("simulation joined once");
        let joined = tokio::task::spawn_blocking(move || handle.join())
            .await
            .map_err(|_| GatewayError::Panicked)?;
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(server) = self.server.take() {
            match server.await {
                Ok(r) => r?,
                Err(e) => warn!("server task ended abnormally: {e}"),
            }
        }
        Ok(joined.map_err(|_| GatewayError::Panicked)??)
    }
}

impl Drop for RunningGateway {
    fn drop(&mut self) {
        self.stop();
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/scenario", get(get_scenario))
        .with_state(state)
}

async fn get_scenario(State(state): State<AppState>) -> Json<ServerMessage> {
    Json(ServerMessage::Scenario((*state.scenario).clone()))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> Result<(), axum::Error> {
    socket.send(Message::Text(msg.to_json().into())).await
}

fn ended(request_id: Option<u64>) -> ServerMessage {
    ServerMessage::Rejection(Rejection::new(
        request_id,
        RejectReason::SimulationEnded,
        "the simulation is no longer running",
    ))
}

async fn session(mut socket: WebSocket, state: AppState) {
    let mut frames = state.frames.clone();
    frames.mark_changed();
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<ServerMessage>();
    if send(
        &mut socket,
        &ServerMessage::Scenario((*state.scenario).clone()),
    )
    .await
    .is_err()
    {
        return;
    }
    let mut last_time = f64::NEG_INFINITY;
    loop {
        tokio::select! {
            changed = frames.changed() => {
                if changed.is_err() {
                    debug!("simulation finished; closing session");
                    break;
                }
                let frame = frames.borrow_and_update().clone();
                if frame.sim_time <= last_time {
                    continue;
                }
                last_time = frame.sim_time;
                if send(&mut socket, &ServerMessage::State(frame)).await.is_err() {
                    break;
                }
            }
            Some(msg) = replies.recv() => {
                if send(&mut socket, &msg).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match parse_client_message(text.as_str()) {
                    Ok(ClientMessage::Command(cmd)) => {
                        let request_id = cmd.request_id;
                        let (tx, rx) = oneshot::channel();
                        if state.commands.send(Pending { cmd, reply: tx }).is_err() {
                            let _ = reply_tx.send(ended(request_id));
                            continue;
                        }
                        let out = reply_tx.clone();
                        tokio::spawn(async move {
                            let msg = match rx.await {
                                Ok(Ok(ack)) => ServerMessage::Ack(ack),
                                Ok(Err(rejection)) => ServerMessage::Rejection(rejection),
                                Err(_) => ended(request_id),
                            };
                            let _ = out.send(msg);
                        });
                    }
                    Err(rejection) => {
                        let _ = reply_tx.send(ServerMessage::Rejection(rejection));
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let r = Rejection::new(None, RejectReason::Malformed, "binary messages are not supported");
                    let _ = reply_tx.send(ServerMessage::Rejection(r));
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

fn sim_loop(
    mut sim: Simulation,
    opts: GatewayOptions,
    frames: watch::Sender<StateFrame>,
    mut commands: mpsc::UnboundedReceiver<Pending>,
    stop: Arc<AtomicBool>,
) -> Result<Simulation, SimError> {
    let stride = ((sim.config().rates.physics_hz / opts.stream_hz).round() as u64).max(1);
    let end_tick = (opts.until / sim.dt()).round() as u64;
    let wall_start = Instant::now();
    let sim_start = sim.time();
    while sim.tick() < end_tick && !stop.load(Ordering::Relaxed) {
        while let Ok(p) = commands.try_recv() {
            let result = handle_command(&mut sim, &p.cmd);
            if let Err(r) = &result {
                debug!("rejected {:?}: {}", p.cmd.kind, r.message);
            }
            let _ = p.reply.send(result);
        }
        sim.step()?;
        if sim.tick().is_multiple_of(stride) {
            frames.send_replace(state_frame(&sim));
        }
        let due =
            wall_start + Duration::from_secs_f64((sim.time() - sim_start) / opts.realtime_factor);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
    commands.close();
    while let Ok(p) = commands.try_recv() {
        let _ = p.reply.send(Err(Rejection::new(
            p.cmd.request_id,
            RejectReason::SimulationEnded,
            "the simulation is no longer running",
        )));
    }
    Ok(sim)
}
