use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{step_pose, Action, Image, Pose};

pub const MIN_TRAJECTORY_STEPS: usize = 3;
pub const MAX_COMPONENT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    pub obs: Image,
    pub pose: Pose,
}

/// One expert episode. Poses are in meters; `p_t` equals
/// `step_pose(p_{t-1}, a_t.scaled(action_scale))`, so raw trajectories have
/// `action_scale == 1` and normalized ones carry the dataset step size.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub map_seed: u64,
    pub start: Image,
    pub goal: Image,
    pub p0: Pose,
    pub steps: Vec<Step>,
    pub action_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterRejection {
    #[error("trajectory has {0} steps, fewer than {MIN_TRAJECTORY_STEPS}")]
    TooShort(usize),
    #[error("step {0} moves backward")]
    BackwardMotion(usize),
    #[error("step {0} is a stop inside the trajectory")]
    InnerStop(usize),
    #[error("average step size must be positive, got {0}")]
    BadStepSize(f64),
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Ground-truth pose list `p_0, p_1, …, p_T`.
    pub fn poses(&self) -> Vec<Pose> {
        std::iter::once(self.p0)
            .chain(self.steps.iter().map(|s| s.pose))
            .collect()
    }

    /// Observation list `o_0 = o_s, o_1, …, o_T`.
    pub fn observations(&self) -> Vec<&Image> {
        std::iter::once(&self.start)
            .chain(self.steps.iter().map(|s| &s.obs))
            .collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn final_pose(&self) -> Pose {
        self.steps.last().map_or(self.p0, |s| s.pose)
    }

    /// Integrates the stored actions from `p_0`.
    pub fn replay(&self) -> Vec<Pose> {
        let mut out = vec![self.p0];
        for s in &self.steps {
            let p = step_pose(out.last().unwrap(), &s.action.scaled(self.action_scale))
                .expect("trajectory steps are moves");
            out.push(p);
        }
        out
    }

    /// Planner and world-model sample counts produced by a sliding window:
    /// one planner sample per move plus the terminal stop, one world-model
    /// sample per move.
    pub fn window_counts(&self) -> (usize, usize) {
        (self.steps.len() + 1, self.steps.len())
    }
}

/// Mean Euclidean displacement per step over all given trajectories.
pub fn average_step_size<'a>(trajs: impl IntoIterator<Item = &'a [Action]>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for actions in trajs {
        for a in actions {
            if let Some((dx, dy, _)) = a.components() {
                sum += dx.hypot(dy);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Checks the length/backward filters on an action list.
pub fn check_filters(actions: &[Action]) -> Result<(), FilterRejection> {
    if actions.len() < MIN_TRAJECTORY_STEPS {
        return Err(FilterRejection::TooShort(actions.len()));
    }
    for (i, a) in actions.iter().enumerate() {
        match a.components() {
            None => return Err(FilterRejection::InnerStop(i)),
            Some((dx, _, _)) if dx < 0.0 => return Err(FilterRejection::BackwardMotion(i)),
            _ => {}
        }
    }
    Ok(())
}

/// Divides each translation by the dataset's average step size and clamps
/// every component to ±0.99. Rotation is only clamped.
pub fn normalize_action(a: &Action, avg_step_size: f64) -> Action {
    match a.components() {
        None => Action::Stop,
        Some((dx, dy, dyaw)) => Action::Move {
            dx: (dx / avg_step_size).clamp(-MAX_COMPONENT, MAX_COMPONENT),
            dy: (dy / avg_step_size).clamp(-MAX_COMPONENT, MAX_COMPONENT),
            dyaw: dyaw.clamp(-MAX_COMPONENT, MAX_COMPONENT),
        },
    }
}

/// Rejects trajectories failing the filters, otherwise rescales the actions.
/// Poses and frames are kept; `action_scale` records the factor so replay
/// stays consistent whenever no clamping was needed.
pub fn normalize_trajectory(traj: &Trajectory, avg_step_size: f64) -> Result<Trajectory, FilterRejection> {
    if !(avg_step_size > 0.0) {
        return Err(FilterRejection::BadStepSize(avg_step_size));
    }
    let raw: Vec<Action> = traj.steps.iter().map(|s| s.action.scaled(traj.action_scale)).collect();
    check_filters(&raw)?;
    let mut out = traj.clone();
    for (s, a) in out.steps.iter_mut().zip(&raw) {
        s.action = normalize_action(a, avg_step_size);
    }
    out.action_scale = avg_step_size;
    Ok(out)
}
