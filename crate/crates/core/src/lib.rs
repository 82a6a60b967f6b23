//! Deterministic multi-agent simulation and control engine for swarms of
//! nano-quadrotors.
//!
//! The crate is layered bottom-up:
//!
//! - [`dynamics`]: point-mass quadrotor model and RK4 integrator
//! - [`control`]: hierarchical flatness / geometric controller
//! - [`planning`]: quintic splines, retiming and replanning
//! - [`netsim`]: simulated inter-agent messaging with QoS
//! - [`formation`]: bearing-based formation control
//! - [`tasking`]: pickup-and-delivery routing
//! - [`orchestrator`]: scenario config, fixed-rate runner and logs
//! - [`gateway`]: operator protocol (state frames and commands)

pub mod control;
pub mod dynamics;
pub mod formation;
pub mod gateway;
pub mod netsim;
pub mod orchestrator;
pub mod planning;
pub mod tasking;

pub use dynamics::Vec3;
