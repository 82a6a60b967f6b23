//! Point-mass quadrotor model with Euler-angle attitude and rotor drag.
//!
//! The translational dynamics are
//!
//! ```text
//! p' = v
//! v' = g z_W - (u1 / m) R(eta) z_W - (1 / m) R(eta) A R(eta)^T v
//! eta' = (u2, u3, u4)
//! ```
//!
//! with `z_W = (0, 0, 1)` taken literally, so gravity accelerates along `+z`
//! and thrust acts along `-R z_W`. Attitude kinematics integrate the commanded
//! rates directly as Euler-angle rates.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Fixed world vertical axis.
pub fn world_z() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// Nano-quadrotor mass in kg.
pub const DEFAULT_MASS: f64 = 0.027;
pub const DEFAULT_GRAVITY: f64 = 9.81;
/// Placeholder rotor-drag diagonal in kg/s. Override per scenario.
pub const DEFAULT_DRAG: [f64; 3] = [9.2e-4, 9.2e-4, 1.0e-3];
/// Saturation limit, roughly 2.2x the hover weight.
pub const DEFAULT_MAX_THRUST: f64 = 0.59;
/// Default integration step (100 Hz).
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
}

/// Position, velocity and Z-Y-X Euler attitude of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// (roll, pitch, yaw) in radians.
    pub attitude: Vec3,
}

impl QuadState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            attitude: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.position) && all_finite(&self.velocity) && all_finite(&self.attitude)
    }

    pub fn yaw(&self) -> f64 {
        self.attitude.z
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(&self.attitude)
    }
}

/// Thrust (N) plus body rate setpoints (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandFPQR {
    pub thrust: f64,
    pub rates: Vec3,
}

impl CommandFPQR {
    pub fn new(thrust: f64, rates: Vec3) -> Self {
        Self { thrust, rates }
    }

    pub fn zero() -> Self {
        Self::new(0.0, Vec3::zeros())
    }

    /// Hover thrust with zero rates.
    pub fn hover(params: &QuadParams) -> Self {
        Self::new(params.hover_thrust(), Vec3::zeros())
    }

    /// Clamps thrust into `[0, max_thrust]`. Actuators saturate; they don't fail.
    pub fn saturated(self, params: &QuadParams) -> Self {
        Self {
            thrust: self.thrust.clamp(0.0, params.max_thrust),
            rates: self.rates,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && all_finite(&self.rates)
    }
}

/// Attitude setpoint form of the command (thrust plus roll/pitch/yaw).
///
/// Accepted for completeness; the simulator only consumes [`CommandFPQR`],
/// so these are mapped through the geometric attitude stage by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandFRPY {
    pub thrust: f64,
    pub attitude: Vec3,
}

/// Position setpoint form of the command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandXYZ {
    pub position: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    pub gravity: f64,
    /// Diagonal of the rotor drag matrix A, kg/s.
    pub drag: Vec3,
    pub max_thrust: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: DEFAULT_MASS,
            gravity: DEFAULT_GRAVITY,
            drag: Vec3::from(DEFAULT_DRAG),
            max_thrust: DEFAULT_MAX_THRUST,
        }
    }
}

impl QuadParams {
    pub fn without_drag(self) -> Self {
        Self {
            drag: Vec3::zeros(),
            ..self
        }
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |name, reason: &str| {
            Err(DynamicsError::InvalidParams {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return bad("mass", "must be positive");
        }
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return bad("gravity", "must be positive");
        }
        if !all_finite(&self.drag) || self.drag.iter().any(|&d| d < 0.0) {
            return bad("drag", "components must be finite and non-negative");
        }
        if !(self.max_thrust.is_finite() && self.max_thrust > 0.0) {
            return bad("max_thrust", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub d_position: Vec3,
    pub d_velocity: Vec3,
    pub d_attitude: Vec3,
}

pub(crate) fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rotation matrix `Rz(yaw) * Ry(pitch) * Rx(roll)` for (roll, pitch, yaw).
pub fn euler_to_rotation(attitude: &Vec3) -> Matrix3<f64> {
    let (sr, cr) = attitude.x.sin_cos();
    let (sp, cp) = attitude.y.sin_cos();
    let (sy, cy) = attitude.z.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`euler_to_rotation`] away from the pitch singularity.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Vec3 {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Vec3::new(roll, pitch, yaw)
}

pub fn state_derivative(
    state: &QuadState,
    cmd: &CommandFPQR,
    params: &QuadParams,
) -> StateDerivative {
    let r = euler_to_rotation(&state.attitude);
    let z = world_z();
    let drag = Matrix3::from_diagonal(&params.drag);
    let d_velocity = params.gravity * z
        - (cmd.thrust / params.mass) * (r * z)
        - (r * drag * r.transpose() * state.velocity) / params.mass;
    StateDerivative {
        d_position: state.velocity,
        d_velocity,
        d_attitude: cmd.rates,
    }
}

fn offset(state: &QuadState, k: &StateDerivative, h: f64) -> QuadState {
    QuadState {
        position: state.position + k.d_position * h,
        velocity: state.velocity + k.d_velocity * h,
        attitude: state.attitude + k.d_attitude * h,
    }
}

/// One classical fourth-order Runge-Kutta step with the command held over `dt`.
///
/// The command is saturated to the actuator range first. The returned attitude
/// is wrapped into `(-pi, pi]`.
pub fn rk4_step(
    state: &QuadState,
    cmd: &CommandFPQR,
    params: &QuadParams,
    dt: f64,
) -> Result<QuadState, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite { what: "state" });
    }
    if !cmd.is_finite() {
        return Err(DynamicsError::NonFinite { what: "command" });
    }
    let cmd = cmd.saturated(params);

    let k1 = state_derivative(state, &cmd, params);
    let k2 = state_derivative(&offset(state, &k1, dt / 2.0), &cmd, params);
    let k3 = state_derivative(&offset(state, &k2, dt / 2.0), &cmd, params);
    let k4 = state_derivative(&offset(state, &k3, dt), &cmd, params);

    let w = dt / 6.0;
    let next = QuadState {
        position: state.position
            + (k1.d_position + 2.0 * k2.d_position + 2.0 * k3.d_position + k4.d_position) * w,
        velocity: state.velocity
            + (k1.d_velocity + 2.0 * k2.d_velocity + 2.0 * k3.d_velocity + k4.d_velocity) * w,
        attitude: (state.attitude
            + (k1.d_attitude + 2.0 * k2.d_attitude + 2.0 * k3.d_attitude + k4.d_attitude) * w)
            .map(wrap_angle),
    };
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite {
            what: "integrated state",
        });
    }
    Ok(next)
}
