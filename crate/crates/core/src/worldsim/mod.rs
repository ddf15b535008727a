//! Procedural egocentric navigation world: grid maps, a column raycaster,
//! planar pose dynamics, expert trajectories and the on-disk dataset.

mod dataset;
mod expert;
mod image;
mod map;
mod pose;
mod render;
mod trajectory;

pub use dataset::{
    build_dataset, load_trajectory, sha256_hex, trajectory_dir, Dataset, Manifest, ManifestEntry, Split,
    TrajectoryMeta, WorldConfig, MANIFEST_SCHEMA_VERSION,
};
pub use expert::{astar, plan_expert, ExpertConfig};
pub use image::Image;
pub use map::{generate_map, WorldMap, MIN_MAP_SIZE, PALETTE_SIZE};
pub use pose::{step_pose, wrap_angle, Action, Pose};
pub use render::{cast_ray, column_ray, palette_color, render_view, RayHit};
pub use trajectory::{
    average_step_size, check_filters, normalize_action, normalize_trajectory, FilterRejection, Step,
    Trajectory, MAX_COMPONENT, MIN_TRAJECTORY_STEPS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("map {width}x{height} is smaller than the 8x8 minimum")]
    MapTooSmall { width: usize, height: usize },
    #[error("pose ({x:.3}, {y:.3}) lies inside a wall")]
    PoseInWall { x: f64, y: f64 },
    #[error("stop carries no motion to integrate")]
    StopNotIntegrable,
    #[error("start or goal cell is not free")]
    CellNotFree,
    #[error("goal is unreachable")]
    Unreachable,
    #[error("trajectory rejected: {0}")]
    Rejected(#[from] FilterRejection),
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("ppm: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
