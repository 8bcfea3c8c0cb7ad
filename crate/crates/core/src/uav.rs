//! UAV kinematics, static circular trajectories and UWB position noise.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ScanError};
use crate::geometry::{angle_diff, gaussian_vec3, Pose, Vec3};

/// Yaw slew limit used by [`step`], rad/s.
pub const MAX_YAW_RATE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavState {
    pub id: usize,
    pub true_pose: Pose,
    /// Latest UWB estimate of the position.
    pub est_position: Vec3,
    pub clock: f64,
}

impl UavState {
    pub fn new(id: usize, pose: Pose) -> Self {
        Self {
            id,
            true_pose: pose,
            est_position: pose.position,
            clock: 0.0,
        }
    }
}

/// A commanded position with the yaw to hold there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub position: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    pub waypoints: Vec<Target>,
    pub cursor: usize,
}

impl TrajectoryPlan {
    pub fn remaining(&self) -> usize {
        self.waypoints.len() - self.cursor
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.waypoints.len()
    }
}

/// Evenly spaced, centre-facing waypoints on `circles` counter-clockwise
/// laps at `radius` from the vertical axis through `center`.
pub fn plan_static_circles(
    center: Vec3,
    radius: f64,
    altitude: f64,
    waypoints_per_circle: usize,
    circles: usize,
    start_azimuth: f64,
) -> Result<TrajectoryPlan> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(ScanError::bad_config(format!("radius must be positive, got {radius}")));
    }
    if waypoints_per_circle < 2 {
        return Err(ScanError::bad_config("need at least 2 waypoints per circle"));
    }
    if !altitude.is_finite() {
        return Err(ScanError::bad_config("altitude must be finite"));
    }
    let waypoints = (0..circles * waypoints_per_circle)
        .map(|k| {
            let az = start_azimuth + TAU * k as f64 / waypoints_per_circle as f64;
            point_on_circle(&center, radius, altitude, az)
        })
        .collect();
    Ok(TrajectoryPlan {
        waypoints,
        cursor: 0,
    })
}

/// Centre-facing target at azimuth `az` on the flight circle.
pub fn point_on_circle(center: &Vec3, radius: f64, altitude: f64, az: f64) -> Target {
    Target {
        position: Vec3::new(center.x + radius * az.cos(), center.y + radius * az.sin(), altitude),
        yaw: facing_yaw(az),
    }
}

/// Yaw of a UAV at azimuth `az` looking at the centre, in (-π, π].
pub fn facing_yaw(az: f64) -> f64 {
    angle_diff(0.0, az + PI)
}

/// Advances the true pose toward `target` without overshooting.
pub fn step(state: &UavState, target: &Target, speed: f64, dt: f64) -> UavState {
    let pos = state.true_pose.position;
    let delta = target.position - pos;
    let dist = delta.norm();
    let travel = speed * dt;
    let new_pos = if dist <= travel { target.position } else { pos + delta * (travel / dist) };

    let yaw = state.true_pose.yaw();
    let dyaw = angle_diff(yaw, target.yaw);
    let max_turn = MAX_YAW_RATE * dt;
    let new_yaw = if dyaw.abs() <= max_turn { target.yaw } else { yaw + max_turn.copysign(dyaw) };

    UavState {
        true_pose: Pose::from_yaw(new_pos, new_yaw),
        clock: state.clock + dt,
        ..*state
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UwbNoiseModel {
    /// Per-axis white noise std, metres.
    pub sigma: f64,
    /// Random-walk bias std, metres per sqrt(second).
    pub bias_walk_sigma: f64,
    /// Exponential smoothing weight of the newest sample, in (0, 1].
    pub smoothing_alpha: f64,
}

impl Default for UwbNoiseModel {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            bias_walk_sigma: 0.005,
            smoothing_alpha: 0.3,
        }
    }
}

impl UwbNoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.bias_walk_sigma >= 0.0) {
            return Err(ScanError::bad_config("UWB noise std must be non-negative"));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(ScanError::bad_config("UWB smoothing alpha must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Per-UAV UWB estimator state: its own rng, bias and smoothed output.
#[derive(Debug, Clone)]
pub struct UwbStream {
    model: UwbNoiseModel,
    rng: ChaCha8Rng,
    bias: Vec3,
    smoothed: Option<Vec3>,
}

impl UwbStream {
    pub fn new(model: UwbNoiseModel, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bias: Vec3::zeros(),
            smoothed: None,
        })
    }

    pub fn model(&self) -> &UwbNoiseModel {
        &self.model
    }
}

/// One UWB reading `dt` seconds after the previous one.
pub fn uwb_estimate(true_position: &Vec3, dt: f64, stream: &mut UwbStream) -> Vec3 {
    let m = stream.model;
    if m.bias_walk_sigma > 0.0 {
        stream.bias += gaussian_vec3(&mut stream.rng, m.bias_walk_sigma * dt.max(0.0).sqrt());
    }
    let noise = if m.sigma > 0.0 { gaussian_vec3(&mut stream.rng, m.sigma) } else { Vec3::zeros() };
    let raw = true_position + stream.bias + noise;
    let out = match stream.smoothed {
        Some(prev) => prev + (raw - prev) * m.smoothing_alpha,
        None => raw,
    };
    stream.smoothed = Some(out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightLogRow {
    pub t: f64,
    pub uav_id: usize,
    pub true_position: Vec3,
    pub est_position: Vec3,
    pub yaw: f64,
}

pub const FLIGHT_LOG_HEADER: &str = "t,uav_id,true_x,true_y,true_z,est_x,est_y,est_z,yaw";

pub fn flight_log_csv(rows: &[FlightLogRow]) -> String {
    let mut s = String::from(FLIGHT_LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{:.3},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.t,
            r.uav_id,
            r.true_position.x,
            r.true_position.y,
            r.true_position.z,
            r.est_position.x,
            r.est_position.y,
            r.est_position.z,
            r.yaw
        );
    }
    s
}
