use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::WorldError;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Planar agent state. `yaw` is counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Body-frame motion command: `dx` along the facing direction, `dy` to the
/// left, `dyaw` counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Action {
    Move { dx: f64, dy: f64, dyaw: f64 },
    Stop,
}

impl Action {
    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop)
    }

    /// Scales the translation part; rotation is unaffected.
    pub fn scaled(&self, s: f64) -> Action {
        match *self {
            Action::Move { dx, dy, dyaw } => Action::Move {
                dx: dx * s,
                dy: dy * s,
                dyaw,
            },
            Action::Stop => Action::Stop,
        }
    }

    pub fn components(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Action::Move { dx, dy, dyaw } => Some((dx, dy, dyaw)),
            Action::Stop => None,
        }
    }
}

/// Integrates one move: the body-frame translation is rotated by the current
/// yaw, then the heading changes by `dyaw`.
pub fn step_pose(pose: &Pose, action: &Action) -> Result<Pose, WorldError> {
    let Action::Move { dx, dy, dyaw } = *action else {
        return Err(WorldError::StopNotIntegrable);
    };
    let (s, c) = pose.yaw.sin_cos();
    Ok(Pose::new(
        pose.x + c * dx - s * dy,
        pose.y + s * dx + c * dy,
        pose.yaw + dyaw,
    ))
}
