//! Hierarchical off-board control: a flatness-based position stage that turns
//! a desired acceleration (or full-state reference) into thrust plus desired
//! attitude, followed by a geometric attitude stage producing rate commands.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{all_finite, world_z, CommandFPQR, CommandFRPY, QuadParams, QuadState, Vec3};

/// Specific-force norms below this cannot define a body axis.
const MIN_SPECIFIC_FORCE: f64 = 1e-6;
const MIN_HEADING_CROSS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(
        "infeasible attitude: specific force norm {0:.3e} is below threshold (free-fall request)"
    )]
    DegenerateThrustDirection(f64),
    #[error("infeasible attitude: desired thrust axis is parallel to the heading vector")]
    HeadingSingularity,
    #[error("setpoint must carry position and velocity together")]
    PartialState,
    #[error("setpoint is not in full-state mode")]
    NotFullState,
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("filter coefficient must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// Flat-output reference. `position` and `velocity` are either both present
/// (full-state mode) or both absent (acceleration-only mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatSetpoint {
    pub position: Option<Vec3>,
    pub velocity: Option<Vec3>,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl FlatSetpoint {
    pub fn acceleration(acceleration: Vec3, yaw: f64) -> Self {
        Self {
            position: None,
            velocity: None,
            acceleration,
            yaw,
            yaw_rate: 0.0,
        }
    }

    pub fn full_state(
        position: Vec3,
        velocity: Vec3,
        acceleration: Vec3,
        yaw: f64,
        yaw_rate: f64,
    ) -> Self {
        Self {
            position: Some(position),
            velocity: Some(velocity),
            acceleration,
            yaw,
            yaw_rate,
        }
    }

    /// Stationary full-state reference.
    pub fn hold(position: Vec3, yaw: f64) -> Self {
        Self::full_state(position, Vec3::zeros(), Vec3::zeros(), yaw, 0.0)
    }

    pub fn is_full_state(&self) -> bool {
        self.position.is_some() && self.velocity.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeSetpoint {
    pub rotation_des: Matrix3<f64>,
    pub thrust: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    pub kp_pos: f64,
    pub kv_pos: f64,
    pub kr_att: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            kp_pos: 6.0,
            kv_pos: 4.5,
            kr_att: 15.0,
        }
    }
}

impl ControlGains {
    pub fn is_valid(&self) -> bool {
        [self.kp_pos, self.kv_pos, self.kr_att]
            .iter()
            .all(|g| g.is_finite() && *g > 0.0)
    }
}

/// Completes a desired thrust axis with a reference yaw via the intermediate heading.
pub fn rotation_from_axis_and_yaw(b3: &Vec3, yaw: f64) -> Result<Matrix3<f64>, ControlError> {
    let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let cross = b3.cross(&heading);
    let n = cross.norm();
    if n < MIN_HEADING_CROSS {
        return Err(ControlError::HeadingSingularity);
    }
    let b2 = cross / n;
    let b1 = b2.cross(b3);
    Ok(Matrix3::from_columns(&[b1, b2, *b3]))
}

/// Maps a desired acceleration to thrust and desired rotation.
///
/// The specific force `f = g z_W - a_des` must equal `(thrust / m) R_des z_W`,
/// so the desired body z-axis is `f / |f|` and `thrust = m |f|`.
pub fn position_control_acceleration(
    _state: &QuadState,
    setpoint: &FlatSetpoint,
    params: &QuadParams,
) -> Result<AttitudeSetpoint, ControlError> {
    if !all_finite(&setpoint.acceleration) || !setpoint.yaw.is_finite() {
        return Err(ControlError::NonFinite("acceleration setpoint"));
    }
    let force = params.gravity * world_z() - setpoint.acceleration;
    let norm = force.norm();
    if norm < MIN_SPECIFIC_FORCE {
        return Err(ControlError::DegenerateThrustDirection(norm));
    }
    let b3 = force / norm;
    let rotation_des = rotation_from_axis_and_yaw(&b3, setpoint.yaw)?;
    Ok(AttitudeSetpoint {
        rotation_des,
        thrust: params.mass * norm,
    })
}

/// PD feedback on position and velocity plus feed-forward acceleration.
pub fn full_state_command_acceleration(
    state: &QuadState,
    setpoint: &FlatSetpoint,
    gains: &ControlGains,
) -> Result<Vec3, ControlError> {
    match (setpoint.position, setpoint.velocity) {
        (Some(p_ref), Some(v_ref)) => Ok(setpoint.acceleration
            + gains.kp_pos * (p_ref - state.position)
            + gains.kv_pos * (v_ref - state.velocity)),
        (None, None) => Err(ControlError::NotFullState),
        _ => Err(ControlError::PartialState),
    }
}

pub fn position_control_fullstate(
    state: &QuadState,
    setpoint: &FlatSetpoint,
    gains: &ControlGains,
    params: &QuadParams,
) -> Result<AttitudeSetpoint, ControlError> {
    let a_cmd = full_state_command_acceleration(state, setpoint, gains)?;
    position_control_acceleration(
        state,
        &FlatSetpoint::acceleration(a_cmd, setpoint.yaw),
        params,
    )
}

fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `e_R = 1/2 vee(R_des^T R - R^T R_des)`.
pub fn attitude_error(r: &Matrix3<f64>, r_des: &Matrix3<f64>) -> Vec3 {
    0.5 * vee(&(r_des.transpose() * r - r.transpose() * r_des))
}

/// Kinematic geometric attitude law: rates proportional to the rotation error.
pub fn attitude_control_geometric(
    r: &Matrix3<f64>,
    setpoint: &AttitudeSetpoint,
    gains: &ControlGains,
) -> CommandFPQR {
    let e_r = attitude_error(r, &setpoint.rotation_des);
    CommandFPQR::new(setpoint.thrust, -gains.kr_att * e_r)
}

/// Runs an attitude-form command through the same geometric stage.
pub fn attitude_command_to_rates(
    state: &QuadState,
    cmd: &CommandFRPY,
    gains: &ControlGains,
) -> CommandFPQR {
    let sp = AttitudeSetpoint {
        rotation_des: crate::dynamics::euler_to_rotation(&cmd.attitude),
        thrust: cmd.thrust,
    };
    attitude_control_geometric(&state.rotation(), &sp, gains)
}

/// Position stage followed by attitude stage. Full-state setpoints get PD
/// feedback; acceleration-only setpoints are tracked open loop. Thrust is
/// saturated to the actuator range.
pub fn hierarchical_step(
    state: &QuadState,
    setpoint: &FlatSetpoint,
    gains: &ControlGains,
    params: &QuadParams,
) -> Result<CommandFPQR, ControlError> {
    let att = match (setpoint.position, setpoint.velocity) {
        (Some(_), Some(_)) => position_control_fullstate(state, setpoint, gains, params)?,
        (None, None) => position_control_acceleration(state, setpoint, params)?,
        _ => return Err(ControlError::PartialState),
    };
    Ok(attitude_control_geometric(&state.rotation(), &att, gains).saturated(params))
}

/// First-order low-pass on a finite-difference derivative.
pub fn filtered_derivative(
    prev_estimate: &Vec3,
    prev_sample: &Vec3,
    new_sample: &Vec3,
    dt: f64,
    alpha: f64,
) -> Result<Vec3, ControlError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ControlError::InvalidStep(dt));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(ControlError::InvalidAlpha(alpha));
    }
    Ok(alpha * prev_estimate + (1.0 - alpha) * (new_sample - prev_sample) / dt)
}

/// Per-agent velocity estimator fed with position samples (e.g. motion capture).
#[derive(Debug, Clone)]
pub struct VelocityFilter {
    alpha: f64,
    last_sample: Option<Vec3>,
    estimate: Vec3,
}

impl VelocityFilter {
    pub const DEFAULT_ALPHA: f64 = 0.8;

    pub fn new(alpha: f64) -> Result<Self, ControlError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(ControlError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            last_sample: None,
            estimate: Vec3::zeros(),
        })
    }

    pub fn update(&mut self, sample: Vec3, dt: f64) -> Result<Vec3, ControlError> {
        if let Some(prev) = self.last_sample {
            self.estimate = filtered_derivative(&self.estimate, &prev, &sample, dt, self.alpha)?;
        }
        self.last_sample = Some(sample);
        Ok(self.estimate)
    }

    pub fn estimate(&self) -> Vec3 {
        self.estimate
    }
}

impl Default for VelocityFilter {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ALPHA).expect("default alpha is valid")
    }
}
