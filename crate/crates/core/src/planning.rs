//! Flat-output trajectory generation.
//!
//! Every segment is a quintic in a normalized parameter `s = (t - t0) / h`.
//! Multi-waypoint splines are solved per channel (x, y, z, yaw) as one linear
//! system: interpolation at every knot, prescribed velocity and acceleration
//! at both ends, and continuity of the first four derivatives at interior
//! knots. The result is C2 (in fact C4) everywhere inside its time range.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::FlatSetpoint;
use crate::dynamics::Vec3;

pub const DEFAULT_MAX_KNOTS: usize = 25;
const CHANNELS: usize = 4;
const YAW: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanningError {
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("waypoint times must be strictly increasing and start at t >= 0 (index {0})")]
    NonIncreasingTimes(usize),
    #[error("retiming factor must be positive and finite, got {0}")]
    InvalidFactor(f64),
    #[error("switch time {t} outside active range [{start}, {end}]")]
    SwitchOutOfRange { t: f64, start: f64, end: f64 },
    #[error("new waypoints must come strictly after the switch time")]
    WaypointBeforeSwitch,
    #[error("polyline has zero length")]
    DegeneratePolyline,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("spline system is singular")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Vec3,
    #[serde(default)]
    pub yaw: f64,
    pub time: f64,
}

impl Waypoint {
    pub fn new(position: Vec3, yaw: f64, time: f64) -> Self {
        Self {
            position,
            yaw,
            time,
        }
    }
}

/// Position, its first two derivatives and yaw with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub yaw_acceleration: f64,
}

impl TrajectorySample {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw,
            yaw_rate: 0.0,
            yaw_acceleration: 0.0,
        }
    }

    pub fn to_setpoint(&self) -> FlatSetpoint {
        FlatSetpoint::full_state(
            self.position,
            self.velocity,
            self.acceleration,
            self.yaw,
            self.yaw_rate,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSegment {
    pub start_time: f64,
    pub end_time: f64,
    /// Quintic coefficients in the normalized parameter, lowest order first,
    /// for x, y, z and yaw.
    pub coeffs: [[f64; 6]; CHANNELS],
}

impl SplineSegment {
    fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }

    /// Value and first two time derivatives of one channel.
    fn eval(&self, channel: usize, t: f64) -> (f64, f64, f64) {
        let h = self.duration();
        let s = (t - self.start_time) / h;
        let c = &self.coeffs[channel];
        let mut p = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for i in (0..6).rev() {
            p = p * s + c[i];
        }
        for i in (1..6).rev() {
            d1 = d1 * s + i as f64 * c[i];
        }
        for i in (2..6).rev() {
            d2 = d2 * s + (i * (i - 1)) as f64 * c[i];
        }
        (p, d1 / h, d2 / (h * h))
    }

    fn sample(&self, t: f64) -> TrajectorySample {
        let ch: Vec<(f64, f64, f64)> = (0..CHANNELS).map(|k| self.eval(k, t)).collect();
        TrajectorySample {
            position: Vec3::new(ch[0].0, ch[1].0, ch[2].0),
            velocity: Vec3::new(ch[0].1, ch[1].1, ch[2].1),
            acceleration: Vec3::new(ch[0].2, ch[1].2, ch[2].2),
            yaw: ch[YAW].0,
            yaw_rate: ch[YAW].1,
            yaw_acceleration: ch[YAW].2,
        }
    }
}

/// Piecewise-quintic flat-output trajectory, contiguous in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSpline {
    segments: Vec<SplineSegment>,
}

impl PolynomialSpline {
    /// A spline that holds `position` over `[start, end]`.
    pub fn constant(position: Vec3, yaw: f64, start: f64, end: f64) -> Result<Self, PlanningError> {
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(PlanningError::InvalidDuration(end - start));
        }
        let mut coeffs = [[0.0; 6]; CHANNELS];
        for k in 0..3 {
            coeffs[k][0] = position[k];
        }
        coeffs[YAW][0] = yaw;
        Ok(Self {
            segments: vec![SplineSegment {
                start_time: start,
                end_time: end,
                coeffs,
            }],
        })
    }

    pub fn segments(&self) -> &[SplineSegment] {
        &self.segments
    }

    pub fn start_time(&self) -> f64 {
        self.segments[0].start_time
    }

    pub fn end_time(&self) -> f64 {
        self.segments[self.segments.len() - 1].end_time
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Knot times including both ends.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.segments.iter().map(|s| s.start_time).collect();
        v.push(self.end_time());
        v
    }

    fn segment_index(&self, t: f64) -> usize {
        // last segment whose start is <= t
        self.segments
            .partition_point(|s| s.start_time <= t)
            .saturating_sub(1)
    }

    /// Full sample with endpoint hold outside the time range.
    pub fn sample_full(&self, t: f64) -> TrajectorySample {
        if t < self.start_time() {
            let s = self.segments[0].sample(self.start_time());
            return TrajectorySample::at_rest(s.position, s.yaw);
        }
        if t >= self.end_time() {
            let last = &self.segments[self.segments.len() - 1];
            let s = last.sample(last.end_time);
            return TrajectorySample::at_rest(s.position, s.yaw);
        }
        self.segments[self.segment_index(t)].sample(t)
    }

    /// Samples inside `[start, end]` without clamping derivatives at the ends.
    pub fn sample_unclamped(&self, t: f64) -> TrajectorySample {
        let idx = self.segment_index(t.clamp(self.start_time(), self.end_time()));
        self.segments[idx].sample(t)
    }

    /// Left-hand limit at `t` (uses the segment ending at or after `t`).
    pub fn sample_left(&self, t: f64) -> TrajectorySample {
        let idx = self
            .segments
            .partition_point(|s| s.end_time < t)
            .min(self.segments.len() - 1);
        self.segments[idx].sample(t)
    }

    /// Full-state setpoint at `t`.
    pub fn sample(&self, t: f64) -> FlatSetpoint {
        self.sample_full(t).to_setpoint()
    }

    /// Scales the time axis by `factor`: the retimed spline at `factor * t`
    /// matches the original at `t`.
    pub fn retime(&self, factor: f64) -> Result<Self, PlanningError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(PlanningError::InvalidFactor(factor));
        }
        Ok(Self {
            segments: self
                .segments
                .iter()
                .map(|s| SplineSegment {
                    start_time: s.start_time * factor,
                    end_time: s.end_time * factor,
                    coeffs: s.coeffs,
                })
                .collect(),
        })
    }

    /// Translates the time axis by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| SplineSegment {
                    start_time: s.start_time + offset,
                    end_time: s.end_time + offset,
                    coeffs: s.coeffs,
                })
                .collect(),
        }
    }
}

/// Boundary derivatives for one end of a fit: velocity and acceleration per channel.
#[derive(Debug, Clone, Copy, Default)]
struct EndCondition {
    velocity: [f64; CHANNELS],
    acceleration: [f64; CHANNELS],
}

fn falling(i: usize, d: usize) -> f64 {
    if i < d {
        return 0.0;
    }
    ((i - d + 1)..=i).product::<usize>() as f64
}

/// Solves the quintic spline through `values` at `times` for all channels.
fn fit(
    times: &[f64],
    values: &[[f64; CHANNELS]],
    start: EndCondition,
    end: EndCondition,
) -> Result<PolynomialSpline, PlanningError> {
    let m = times.len() - 1;
    let n = 6 * m;
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DMatrix::<f64>::zeros(n, CHANNELS);
    let col = |seg: usize, i: usize| 6 * seg + i;
    let mut row = 0;

    for k in 0..m {
        a[(row, col(k, 0))] = 1.0;
        for ch in 0..CHANNELS {
            rhs[(row, ch)] = values[k][ch];
        }
        row += 1;
        for i in 0..6 {
            a[(row, col(k, i))] = 1.0;
        }
        for ch in 0..CHANNELS {
            rhs[(row, ch)] = values[k + 1][ch];
        }
        row += 1;
    }

    // start: c1 = v h, 2 c2 = a h^2
    a[(row, col(0, 1))] = 1.0;
    for ch in 0..CHANNELS {
        rhs[(row, ch)] = start.velocity[ch] * h[0];
    }
    row += 1;
    a[(row, col(0, 2))] = 2.0;
    for ch in 0..CHANNELS {
        rhs[(row, ch)] = start.acceleration[ch] * h[0] * h[0];
    }
    row += 1;

    let hl = h[m - 1];
    for i in 1..6 {
        a[(row, col(m - 1, i))] = falling(i, 1);
    }
    for ch in 0..CHANNELS {
        rhs[(row, ch)] = end.velocity[ch] * hl;
    }
    row += 1;
    for i in 2..6 {
        a[(row, col(m - 1, i))] = falling(i, 2);
    }
    for ch in 0..CHANNELS {
        rhs[(row, ch)] = end.acceleration[ch] * hl * hl;
    }
    row += 1;

    // interior continuity of derivatives 1..=4, scaled by h_right^d
    for j in 1..m {
        for d in 1..=4 {
            let ratio = (h[j] / h[j - 1]).powi(d as i32);
            for i in d..6 {
                a[(row, col(j - 1, i))] = falling(i, d) * ratio;
            }
            a[(row, col(j, d))] = -falling(d, d);
            row += 1;
        }
    }
    debug_assert_eq!(row, n);

    let sol = a.lu().solve(&rhs).ok_or(PlanningError::Singular)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(PlanningError::Singular);
    }
    let segments = (0..m)
        .map(|k| {
            let mut coeffs = [[0.0; 6]; CHANNELS];
            for (ch, c) in coeffs.iter_mut().enumerate() {
                for (i, ci) in c.iter_mut().enumerate() {
                    *ci = sol[(col(k, i), ch)];
                }
            }
            // interpolation at the left knot is exact by construction
            for ch in 0..CHANNELS {
                coeffs[ch][0] = values[k][ch];
            }
            SplineSegment {
                start_time: times[k],
                end_time: times[k + 1],
                coeffs,
            }
        })
        .collect();
    Ok(PolynomialSpline { segments })
}

/// Unwraps a yaw sequence so consecutive values differ by at most pi.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    for (i, &a) in angles.iter().enumerate() {
        if i == 0 {
            out.push(a);
            continue;
        }
        let prev: f64 = out[i - 1];
        let mut d = (a - prev).rem_euclid(2.0 * PI);
        if d > PI {
            d -= 2.0 * PI;
        }
        out.push(prev + d);
    }
    out
}

fn check_waypoints(points: &[Waypoint]) -> Result<(), PlanningError> {
    if points.len() < 2 {
        return Err(PlanningError::TooFewPoints(points.len()));
    }
    for (i, p) in points.iter().enumerate() {
        if !p.position.iter().all(|x| x.is_finite()) || !p.yaw.is_finite() || !p.time.is_finite() {
            return Err(PlanningError::NonFinite("waypoint"));
        }
        if i == 0 && p.time < 0.0 {
            return Err(PlanningError::NonIncreasingTimes(0));
        }
        if i > 0 && p.time <= points[i - 1].time {
            return Err(PlanningError::NonIncreasingTimes(i));
        }
    }
    Ok(())
}

fn channel_values(points: &[Waypoint]) -> Vec<[f64; CHANNELS]> {
    let yaws: Vec<f64> = points.iter().map(|p| p.yaw).collect();
    points
        .iter()
        .zip(unwrap_angles(&yaws))
        .map(|(p, yaw)| [p.position.x, p.position.y, p.position.z, yaw])
        .collect()
}

/// Rest-to-rest quintic from `start` to `goal` over `[0, duration]`.
pub fn point_to_point(
    start: Vec3,
    goal: Vec3,
    duration: f64,
) -> Result<PolynomialSpline, PlanningError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(PlanningError::InvalidDuration(duration));
    }
    interpolate_waypoints(&[
        Waypoint::new(start, 0.0, 0.0),
        Waypoint::new(goal, 0.0, duration),
    ])
}

/// C2 spline through every waypoint, at rest at both ends.
pub fn interpolate_waypoints(points: &[Waypoint]) -> Result<PolynomialSpline, PlanningError> {
    check_waypoints(points)?;
    let times: Vec<f64> = points.iter().map(|p| p.time).collect();
    let values = channel_values(points);
    fit(
        &times,
        &values,
        EndCondition::default(),
        EndCondition::default(),
    )
}

/// Builds a new spline that leaves `active` at `t_switch` with matching
/// position, velocity and acceleration, then passes through `new_points` and
/// comes to rest at the last one.
pub fn replan(
    active: &PolynomialSpline,
    t_switch: f64,
    new_points: &[Waypoint],
) -> Result<PolynomialSpline, PlanningError> {
    if !t_switch.is_finite() || t_switch < active.start_time() || t_switch > active.end_time() {
        return Err(PlanningError::SwitchOutOfRange {
            t: t_switch,
            start: active.start_time(),
            end: active.end_time(),
        });
    }
    if new_points.is_empty() {
        return Err(PlanningError::TooFewPoints(0));
    }
    if new_points[0].time <= t_switch {
        return Err(PlanningError::WaypointBeforeSwitch);
    }
    let junction = active.sample_unclamped(t_switch);
    let mut points = Vec::with_capacity(new_points.len() + 1);
    points.push(Waypoint::new(junction.position, junction.yaw, t_switch));
    points.extend_from_slice(new_points);
    check_waypoints(&points)?;

    let times: Vec<f64> = points.iter().map(|p| p.time).collect();
    let values = channel_values(&points);
    let v = junction.velocity;
    let a = junction.acceleration;
    let start = EndCondition {
        velocity: [v.x, v.y, v.z, junction.yaw_rate],
        acceleration: [a.x, a.y, a.z, junction.yaw_acceleration],
    };
    fit(&times, &values, start, EndCondition::default())
}

/// A hand-drawn stroke, either in the ground plane or in space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polyline {
    Planar(Vec<[f64; 2]>),
    Spatial(Vec<[f64; 3]>),
}

impl Polyline {
    pub fn len(&self) -> usize {
        match self {
            Polyline::Planar(p) => p.len(),
            Polyline::Spatial(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lifted(&self, altitude: f64) -> Vec<Vec3> {
        match self {
            Polyline::Planar(p) => p.iter().map(|q| Vec3::new(q[0], q[1], altitude)).collect(),
            Polyline::Spatial(p) => p.iter().map(|q| Vec3::new(q[0], q[1], q[2])).collect(),
        }
    }
}

/// Turns a drawn polyline into timed waypoints.
///
/// Consecutive duplicates are dropped. When more than `max_knots` vertices
/// remain the stroke is resampled uniformly in arc length. Knot times are
/// proportional to the arc-length position along the original stroke, from 0
/// to `total_time`.
pub fn polyline_to_waypoints(
    polyline: &Polyline,
    total_time: f64,
    altitude: f64,
    max_knots: usize,
) -> Result<Vec<Waypoint>, PlanningError> {
    if polyline.len() < 2 {
        return Err(PlanningError::TooFewPoints(polyline.len()));
    }
    if !(total_time.is_finite() && total_time > 0.0) {
        return Err(PlanningError::InvalidDuration(total_time));
    }
    let mut pts: Vec<Vec3> = Vec::with_capacity(polyline.len());
    for p in polyline.lifted(altitude) {
        if !p.iter().all(|x| x.is_finite()) {
            return Err(PlanningError::NonFinite("polyline"));
        }
        if pts.last().is_none_or(|q: &Vec3| (p - q).norm() > 0.0) {
            pts.push(p);
        }
    }
    if pts.len() < 2 {
        return Err(PlanningError::DegeneratePolyline);
    }
    let mut cumulative = vec![0.0];
    for w in pts.windows(2) {
        let last = cumulative[cumulative.len() - 1];
        cumulative.push(last + (w[1] - w[0]).norm());
    }
    let length = cumulative[cumulative.len() - 1];

    let max_knots = max_knots.max(2);
    let (positions, arc): (Vec<Vec3>, Vec<f64>) = if pts.len() <= max_knots {
        (pts, cumulative)
    } else {
        let mut seg = 0;
        (0..max_knots)
            .map(|i| {
                let s = length * i as f64 / (max_knots - 1) as f64;
                if i == max_knots - 1 {
                    return (pts[pts.len() - 1], length);
                }
                while seg + 1 < cumulative.len() - 1 && cumulative[seg + 1] < s {
                    seg += 1;
                }
                let span = cumulative[seg + 1] - cumulative[seg];
                let u = ((s - cumulative[seg]) / span).clamp(0.0, 1.0);
                (pts[seg] + (pts[seg + 1] - pts[seg]) * u, s)
            })
            .unzip()
    };

    Ok(positions
        .into_iter()
        .zip(arc)
        .map(|(p, s)| Waypoint::new(p, 0.0, total_time * s / length))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    /// Independent oracle: the rest-to-rest quintic solved from its six
    /// boundary conditions with a generic dense solve.
    fn quintic_oracle(duration: f64) -> [f64; 6] {
        let t = duration;
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(6, 6, &[
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 2.0, 0.0, 0.0, 0.0,
            1.0, t, t.powi(2), t.powi(3), t.powi(4), t.powi(5),
            0.0, 1.0, 2.0 * t, 3.0 * t.powi(2), 4.0 * t.powi(3), 5.0 * t.powi(4),
            0.0, 0.0, 2.0, 6.0 * t, 12.0 * t.powi(2), 20.0 * t.powi(3),
        ]);
        let b = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let x = a.lu().solve(&b).unwrap();
        [x[0], x[1], x[2], x[3], x[4], x[5]]
    }

    #[test]
    fn point_to_point_quintic_profile() {
        let c = quintic_oracle(1.0);
        assert_relative_eq!(c[3], 10.0, epsilon = 1e-12);
        assert_relative_eq!(c[4], -15.0, epsilon = 1e-12);
        assert_relative_eq!(c[5], 6.0, epsilon = 1e-12);
        let s_oracle = |t: f64| {
            c.iter()
                .enumerate()
                .map(|(i, ci)| ci * t.powi(i as i32))
                .sum::<f64>()
        };
        assert_relative_eq!(s_oracle(0.25), 0.103515625, epsilon = 1e-12);

        let sp = point_to_point(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(
            sp.sample_full(0.5).position,
            Vec3::new(0.5, 0.0, 0.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            sp.sample_full(0.25).position.x,
            0.103515625,
            epsilon = 1e-12
        );
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert_relative_eq!(sp.sample_full(t).position.x, s_oracle(t), epsilon = 1e-12);
        }
        let end = sp.sample_full(1.0);
        assert_eq!(end.position, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(end.velocity, Vec3::zeros());
    }

    #[test]
    fn point_to_point_degenerate_and_errors() {
        let p = Vec3::new(0.2, 0.3, 1.0);
        let sp = point_to_point(p, p, 2.0).unwrap();
        for k in 0..=10 {
            let s = sp.sample_full(0.2 * k as f64);
            assert_relative_eq!(s.position, p, epsilon = 1e-15);
            assert!(s.velocity.norm() < 1e-15);
        }
        assert_eq!(
            point_to_point(p, p, 0.0),
            Err(PlanningError::InvalidDuration(0.0))
        );
    }

    #[test]
    fn two_waypoints_reduce_to_point_to_point() {
        let a = Vec3::new(0.0, 1.0, 1.0);
        let b = Vec3::new(1.0, -1.0, 2.0);
        let w = interpolate_waypoints(&[Waypoint::new(a, 0.0, 0.0), Waypoint::new(b, 0.0, 3.0)])
            .unwrap();
        let p = point_to_point(a, b, 3.0).unwrap();
        for k in 0..=30 {
            let t = 0.1 * k as f64;
            assert_relative_eq!(
                w.sample_full(t).position,
                p.sample_full(t).position,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn collinear_waypoints_stay_on_line() {
        let pts: Vec<Waypoint> = (0..3)
            .map(|i| Waypoint::new(Vec3::new(i as f64, 0.0, 1.0), 0.0, i as f64))
            .collect();
        let sp = interpolate_waypoints(&pts).unwrap();
        for k in 0..=40 {
            let s = sp.sample_full(0.05 * k as f64);
            assert!(s.position.y.abs() < 1e-12);
            assert!((s.position.z - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn waypoint_validation() {
        let p = Waypoint::new(Vec3::zeros(), 0.0, 0.0);
        assert_eq!(
            interpolate_waypoints(&[p]),
            Err(PlanningError::TooFewPoints(1))
        );
        let q = Waypoint::new(Vec3::zeros(), 0.0, 0.0);
        assert_eq!(
            interpolate_waypoints(&[p, q]),
            Err(PlanningError::NonIncreasingTimes(1))
        );
    }

    #[test]
    fn sample_clamps_outside_range() {
        let sp = point_to_point(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 1.0)
            .unwrap()
            .shifted(2.0);
        let before = sp.sample_full(0.0);
        assert_eq!(before.position, Vec3::zeros());
        assert_eq!(before.velocity, Vec3::zeros());
        let after = sp.sample_full(10.0);
        assert_relative_eq!(after.position, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(after.acceleration, Vec3::zeros());
    }

    #[test]
    fn retime_scales_derivatives() {
        let sp = point_to_point(Vec3::zeros(), Vec3::new(1.0, 2.0, 0.0), 1.0).unwrap();
        let same = sp.retime(1.0).unwrap();
        assert_eq!(same, sp);
        let slow = sp.retime(2.0).unwrap();
        let fast = sp.retime(0.5).unwrap();
        for k in 1..10 {
            let t = 0.1 * k as f64;
            let o = sp.sample_full(t);
            let s = slow.sample_full(2.0 * t);
            let f = fast.sample_full(0.5 * t);
            assert_relative_eq!(s.position, o.position, epsilon = 1e-12);
            assert_relative_eq!(s.velocity, o.velocity / 2.0, epsilon = 1e-12);
            assert_relative_eq!(f.acceleration, o.acceleration * 4.0, epsilon = 1e-9);
        }
        assert_eq!(sp.retime(0.0), Err(PlanningError::InvalidFactor(0.0)));
    }

    #[test]
    fn central_differences_match_analytic_derivatives() {
        let pts = vec![
            Waypoint::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0),
            Waypoint::new(Vec3::new(1.0, 0.5, 1.2), 0.3, 1.5),
            Waypoint::new(Vec3::new(0.5, 1.5, 0.8), -0.2, 3.5),
            Waypoint::new(Vec3::new(-0.5, 1.0, 1.0), 0.1, 5.0),
        ];
        let sp = interpolate_waypoints(&pts).unwrap();
        let h = 1e-4;
        for k in 1..50 {
            let t = 0.1 * k as f64;
            let s = sp.sample_full(t);
            let fd_v =
                (sp.sample_full(t + h).position - sp.sample_full(t - h).position) / (2.0 * h);
            let fd_a =
                (sp.sample_full(t + h).velocity - sp.sample_full(t - h).velocity) / (2.0 * h);
            assert!((fd_v - s.velocity).amax() < 1e-6);
            assert!((fd_a - s.acceleration).amax() < 1e-5);
            let fd_yaw = (sp.sample_full(t + h).yaw - sp.sample_full(t - h).yaw) / (2.0 * h);
            assert!((fd_yaw - s.yaw_rate).abs() < 1e-6);
        }
    }

    #[test]
    fn yaw_unwrapping_avoids_long_way_round() {
        let pts = vec![
            Waypoint::new(Vec3::zeros(), 3.0, 0.0),
            Waypoint::new(Vec3::zeros(), -3.0, 1.0),
        ];
        let sp = interpolate_waypoints(&pts).unwrap();
        let mid = sp.sample_full(0.5).yaw;
        // the short way crosses +pi
        assert!(mid > 3.0);
        assert_eq!(unwrap_angles(&[3.0, -3.0])[1], -3.0 + 2.0 * PI);
    }

    #[test]
    fn replan_reduces_to_interpolation_from_rest() {
        let start = Vec3::new(0.0, 0.0, 1.0);
        let active = PolynomialSpline::constant(start, 0.0, 0.0, 5.0).unwrap();
        let new_points = vec![
            Waypoint::new(Vec3::new(1.0, 0.0, 1.0), 0.0, 2.0),
            Waypoint::new(Vec3::new(1.0, 1.0, 1.0), 0.0, 4.0),
        ];
        let r = replan(&active, 0.0, &new_points).unwrap();
        let mut all = vec![Waypoint::new(start, 0.0, 0.0)];
        all.extend_from_slice(&new_points);
        let w = interpolate_waypoints(&all).unwrap();
        for k in 0..=40 {
            let t = 0.1 * k as f64;
            assert_relative_eq!(
                r.sample_full(t).position,
                w.sample_full(t).position,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn replan_preconditions() {
        let active = point_to_point(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 2.0).unwrap();
        let wp = vec![Waypoint::new(Vec3::zeros(), 0.0, 3.0)];
        assert!(matches!(
            replan(&active, 2.5, &wp),
            Err(PlanningError::SwitchOutOfRange { .. })
        ));
        assert_eq!(
            replan(&active, 1.0, &[Waypoint::new(Vec3::zeros(), 0.0, 0.5)]),
            Err(PlanningError::WaypointBeforeSwitch)
        );
    }

    #[test]
    fn polyline_basic_cases() {
        let line = Polyline::Planar(vec![[0.0, 0.0], [1.0, 0.0]]);
        let w = polyline_to_waypoints(&line, 4.0, 1.5, DEFAULT_MAX_KNOTS).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].time, 0.0);
        assert_eq!(w[1].time, 4.0);
        assert_eq!(w[1].position, Vec3::new(1.0, 0.0, 1.5));

        let one = Polyline::Planar(vec![[0.0, 0.0]]);
        assert_eq!(
            polyline_to_waypoints(&one, 4.0, 1.0, 25),
            Err(PlanningError::TooFewPoints(1))
        );
        let stuck = Polyline::Planar(vec![[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(
            polyline_to_waypoints(&stuck, 4.0, 1.0, 25),
            Err(PlanningError::DegeneratePolyline)
        );
    }

    #[test]
    fn polyline_l_shape_times_follow_arc_length() {
        // (0,0) -> (1,0) -> (1,1) at 100 uniform-speed samples; the corner
        // itself is not a sample, so the stroke cuts it slightly
        let pts: Vec<[f64; 2]> = (0..100)
            .map(|i| {
                let s = 2.0 * i as f64 / 99.0;
                if s <= 1.0 {
                    [s, 0.0]
                } else {
                    [1.0, s - 1.0]
                }
            })
            .collect();
        // cumulative-length oracle: locate each knot on the input stroke
        let arc_of = |p: &Vec3| {
            let mut acc = 0.0;
            let mut best = (f64::INFINITY, 0.0);
            for w in pts.windows(2) {
                let a = Vec3::new(w[0][0], w[0][1], 1.0);
                let b = Vec3::new(w[1][0], w[1][1], 1.0);
                let len = (b - a).norm();
                let u = ((p - a).dot(&(b - a)) / (len * len)).clamp(0.0, 1.0);
                let d = (a + (b - a) * u - p).norm();
                if d < best.0 {
                    best = (d, acc + u * len);
                }
                acc += len;
            }
            (best.1, acc)
        };
        let w = polyline_to_waypoints(&Polyline::Planar(pts.clone()), 10.0, 1.0, 25).unwrap();
        assert_eq!(w.len(), 25);
        for wp in &w {
            let (arc, total) = arc_of(&wp.position);
            assert!((wp.time - 10.0 * arc / total).abs() < 1e-6);
        }
        // uniform resampling: equal time steps
        for pair in w.windows(2) {
            assert!((pair[1].time - pair[0].time - 10.0 / 24.0).abs() < 1e-9);
        }
    }
}
