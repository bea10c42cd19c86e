use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_V_MAX: f64 = 2.0;
pub const DEFAULT_OMEGA_MAX: f64 = 1.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-π, π].
    pub theta: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn distance_to(&self, other: &AgentPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { v_max: DEFAULT_V_MAX, omega_max: DEFAULT_OMEGA_MAX }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error("velocity command out of range: v={v}, omega={omega}")]
    OutOfRange { v: f64, omega: f64 },
    #[error("unparseable command payload: {0}")]
    BadPayload(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v: f64,
    pub omega: f64,
}

impl VelocityCommand {
    pub const STOP: VelocityCommand = VelocityCommand { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64, limits: &Limits) -> Result<Self, CommandError> {
        if !v.is_finite() || !omega.is_finite() || v.abs() > limits.v_max || omega.abs() > limits.omega_max {
            return Err(CommandError::OutOfRange { v, omega });
        }
        Ok(Self { v, omega })
    }
}

/// Wraps into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

/// One explicit Euler step of the unicycle model.
pub fn pose_step(pose: AgentPose, cmd: VelocityCommand, dt: f64) -> AgentPose {
    if !(dt > 0.0 && dt.is_finite()) {
        return pose;
    }
    AgentPose {
        x: pose.x + cmd.v * pose.theta.cos() * dt,
        y: pose.y + cmd.v * pose.theta.sin() * dt,
        theta: normalize_angle(pose.theta + cmd.omega * dt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_is_fixed_point() {
        let p = pose_step(AgentPose::default(), VelocityCommand::STOP, 1.0);
        assert_eq!(p, AgentPose::default());
    }

    #[test]
    fn straight_line() {
        let p = pose_step(AgentPose::default(), VelocityCommand { v: 1.0, omega: 0.0 }, 1.0);
        assert!((p.x - 1.0).abs() < 1e-9 && p.y.abs() < 1e-9 && p.theta.abs() < 1e-9);
    }

    #[test]
    fn angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-0.5) + 0.5).abs() < 1e-15);
        for k in -20..20 {
            let t = normalize_angle(k as f64 * 0.77);
            assert!(t > -PI && t <= PI);
        }
    }

    #[test]
    fn limits() {
        let l = Limits::default();
        assert!(VelocityCommand::new(2.0, -1.5, &l).is_ok());
        assert!(VelocityCommand::new(2.01, 0.0, &l).is_err());
        assert!(VelocityCommand::new(0.0, f64::NAN, &l).is_err());
    }
}
