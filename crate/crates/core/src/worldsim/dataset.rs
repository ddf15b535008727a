use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::expert::{astar, plan_expert, ExpertConfig};
use super::trajectory::{average_step_size, check_filters, normalize_trajectory, MAX_COMPONENT};
use super::{generate_map, render_view, step_pose, Action, Image, Pose, Step, Trajectory, WorldError, WorldMap};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub map_width: usize,
    pub map_height: usize,
    /// Square frame side in pixels.
    pub resolution: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// Path length bounds (in grid cells) between start and goal.
    pub min_path_cells: usize,
    pub max_path_cells: usize,
    /// Start heading is the first path direction plus uniform noise of this
    /// half-width (radians).
    pub start_yaw_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            map_width: 16,
            map_height: 16,
            resolution: 32,
            n_train: 2000,
            n_eval: 200,
            seed: 7,
            min_path_cells: 3,
            max_path_cells: 7,
            start_yaw_noise: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.map_width < super::map::MIN_MAP_SIZE || self.map_height < super::map::MIN_MAP_SIZE {
            return bad("map dimensions must be at least 8");
        }
        if self.resolution < 4 {
            return bad("resolution must be at least 4");
        }
        if self.n_train == 0 {
            return bad("n_train must be positive");
        }
        if self.min_path_cells < 3 || self.max_path_cells < self.min_path_cells {
            return bad("path bounds must satisfy 3 <= min_path_cells <= max_path_cells");
        }
        if !(self.start_yaw_noise >= 0.0) {
            return bad("start_yaw_noise must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub dir: String,
    pub split: Split,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub avg_step_size: f64,
    pub resolution: usize,
    pub map_width: usize,
    pub map_height: usize,
    pub rejected: usize,
    pub config: WorldConfig,
    pub trajectories: Vec<ManifestEntry>,
}

/// Per-trajectory `meta.json`. Actions are normalized; poses are meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub id: usize,
    pub split: Split,
    pub map_seed: u64,
    pub map_width: usize,
    pub map_height: usize,
    pub action_scale: f64,
    pub p0: Pose,
    pub actions: Vec<Action>,
    pub poses: Vec<Pose>,
}

/// Sampled episode before rendering.
#[derive(Debug, Clone)]
struct Episode {
    map: WorldMap,
    p0: Pose,
    actions: Vec<Action>,
}

fn candidate_seed(master: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn grid_distances(map: &WorldMap, from: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; map.cells.len()];
    d[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(c) = q.pop_front() {
        for n in map.neighbors(c) {
            if d[n] == usize::MAX {
                d[n] = d[c] + 1;
                q.push_back(n);
            }
        }
    }
    d
}

fn sample_episode(cfg: &WorldConfig, index: usize, max_step: f64) -> Result<Episode, WorldError> {
    let seed = candidate_seed(cfg.seed, index);
    let map = generate_map(seed, cfg.map_width, cfg.map_height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17));
    let dist = grid_distances(&map, map.goal_cell);
    let starts: Vec<usize> = (0..map.cells.len())
        .filter(|&c| dist[c] >= cfg.min_path_cells && dist[c] <= cfg.max_path_cells)
        .collect();
    if starts.is_empty() {
        return Err(WorldError::Unreachable);
    }
    let start = starts[rng.random_range(0..starts.len())];
    let path = astar(&map, start, map.goal_cell).ok_or(WorldError::Unreachable)?;
    let (sx, sy) = map.center(start);
    let (nx, ny) = map.center(path[1]);
    let noise = if cfg.start_yaw_noise > 0.0 {
        rng.random_range(-cfg.start_yaw_noise..=cfg.start_yaw_noise)
    } else {
        0.0
    };
    let p0 = Pose::new(sx, sy, (ny - sy).atan2(nx - sx) + noise);
    let expert = ExpertConfig {
        max_step,
        ..Default::default()
    };
    let actions = plan_expert(&map, &p0, start, map.goal_cell, &expert, &mut rng)?;
    Ok(Episode { map, p0, actions })
}

fn render_episode(
    ep: &Episode,
    id: usize,
    res: usize,
    avg_step_size: f64,
) -> Result<Trajectory, WorldError> {
    let start = render_view(&ep.map, &ep.p0, res, res)?;
    let mut pose = ep.p0;
    let mut steps = Vec::with_capacity(ep.actions.len());
    for a in &ep.actions {
        pose = step_pose(&pose, a)?;
        steps.push(Step {
            action: *a,
            obs: render_view(&ep.map, &pose, res, res)?,
            pose,
        });
    }
    let goal = steps.last().map_or_else(|| start.clone(), |s| s.obs.clone());
    let raw = Trajectory {
        id,
        map_seed: ep.map.seed,
        start,
        goal,
        p0: ep.p0,
        steps,
        action_scale: 1.0,
    };
    Ok(normalize_trajectory(&raw, avg_step_size)?)
}

pub fn trajectory_dir(id: usize) -> String {
    format!("traj_{id:06}")
}

/// In-memory dataset: manifest plus fully loaded trajectories.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub manifest_hash: String,
    pub train: Vec<Trajectory>,
    pub eval: Vec<Trajectory>,
}

/// Generates train/eval trajectories on fresh seeded maps and writes them
/// under `out_dir`. The average step size is measured on an uncapped pilot
/// pass over the training candidates; the recorded pass caps every step at
/// `0.99 ×` that size so normalization never needs to clamp translations.
pub fn build_dataset(cfg: &WorldConfig, out_dir: &Path) -> Result<Manifest, WorldError> {
    cfg.validate()?;
    let total = cfg.n_train + cfg.n_eval;

    // pilot pass: step statistics of the training candidates
    let mut pilot = Vec::new();
    let mut index = 0;
    while pilot.len() < cfg.n_train {
        if index > 50 * total + 1000 {
            return Err(WorldError::Config("too many rejected candidates".into()));
        }
        if let Ok(ep) = sample_episode(cfg, index, f64::INFINITY) {
            if check_filters(&ep.actions).is_ok() {
                pilot.push(ep.actions);
            }
        }
        index += 1;
    }
    let avg = average_step_size(pilot.iter().map(Vec::as_slice));
    let cap = MAX_COMPONENT * avg;

    let mut accepted: Vec<Episode> = Vec::with_capacity(total);
    let mut rejected = 0;
    let mut index = 0;
    while accepted.len() < total {
        if index > 50 * total + 1000 {
            return Err(WorldError::Config("too many rejected candidates".into()));
        }
        match sample_episode(cfg, index, cap) {
            Ok(ep) if check_filters(&ep.actions).is_ok() => accepted.push(ep),
            _ => rejected += 1,
        }
        index += 1;
    }

    fs::create_dir_all(out_dir)?;
    let entries: Vec<ManifestEntry> = accepted
        .par_iter()
        .enumerate()
        .map(|(id, ep)| -> Result<ManifestEntry, WorldError> {
            let split = if id < cfg.n_train { Split::Train } else { Split::Eval };
            let traj = render_episode(ep, id, cfg.resolution, avg)?;
            write_trajectory(out_dir, &traj, split, cfg)?;
            Ok(ManifestEntry {
                id,
                dir: trajectory_dir(id),
                split,
                steps: traj.len(),
            })
        })
        .collect::<Result<_, _>>()?;

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: cfg.seed,
        n_train: cfg.n_train,
        n_eval: cfg.n_eval,
        avg_step_size: avg,
        resolution: cfg.resolution,
        map_width: cfg.map_width,
        map_height: cfg.map_height,
        rejected,
        config: cfg.clone(),
        trajectories: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

fn write_trajectory(root: &Path, t: &Trajectory, split: Split, cfg: &WorldConfig) -> Result<(), WorldError> {
    let dir = root.join(trajectory_dir(t.id));
    fs::create_dir_all(&dir)?;
    let meta = TrajectoryMeta {
        id: t.id,
        split,
        map_seed: t.map_seed,
        map_width: cfg.map_width,
        map_height: cfg.map_height,
        action_scale: t.action_scale,
        p0: t.p0,
        actions: t.actions(),
        poses: t.steps.iter().map(|s| s.pose).collect(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    t.start.write_ppm(&dir.join("start.ppm"))?;
    t.goal.write_ppm(&dir.join("goal.ppm"))?;
    for (i, s) in t.steps.iter().enumerate() {
        s.obs.write_ppm(&dir.join(format!("o_{:03}.ppm", i + 1)))?;
    }
    Ok(())
}

pub fn load_trajectory(root: &Path, id: usize) -> Result<(Trajectory, TrajectoryMeta), WorldError> {
    let dir = root.join(trajectory_dir(id));
    let meta: TrajectoryMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let start = Image::read_ppm(&dir.join("start.ppm"))?;
    let goal = Image::read_ppm(&dir.join("goal.ppm"))?;
    let mut steps = Vec::with_capacity(meta.actions.len());
    for (i, (a, p)) in meta.actions.iter().zip(&meta.poses).enumerate() {
        steps.push(Step {
            action: *a,
            obs: Image::read_ppm(&dir.join(format!("o_{:03}.ppm", i + 1)))?,
            pose: *p,
        });
    }
    let traj = Trajectory {
        id: meta.id,
        map_seed: meta.map_seed,
        start,
        goal,
        p0: meta.p0,
        steps,
        action_scale: meta.action_scale,
    };
    Ok((traj, meta))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Dataset {
    pub fn read_manifest(root: &Path) -> Result<(Manifest, String), WorldError> {
        let bytes = fs::read(root.join("manifest.json"))?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        Ok((m, sha256_hex(&bytes)))
    }

    pub fn load(root: &Path) -> Result<Self, WorldError> {
        let (manifest, manifest_hash) = Self::read_manifest(root)?;
        let loaded: Vec<(Split, Trajectory)> = manifest
            .trajectories
            .par_iter()
            .map(|e| load_trajectory(root, e.id).map(|(t, _)| (e.split, t)))
            .collect::<Result<_, _>>()?;
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for (split, t) in loaded {
            match split {
                Split::Train => train.push(t),
                Split::Eval => eval.push(t),
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            manifest_hash,
            train,
            eval,
        })
    }

    /// Regenerates the map a trajectory was recorded on.
    pub fn map_for(&self, t: &Trajectory) -> Result<WorldMap, WorldError> {
        generate_map(t.map_seed, self.manifest.map_width, self.manifest.map_height)
    }

    pub fn find(&self, id: usize) -> Option<&Trajectory> {
        self.train.iter().chain(&self.eval).find(|t| t.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_train: 12,
            n_eval: 3,
            resolution: 16,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_manifest() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_dataset(&small(), a.path()).unwrap();
        build_dataset(&small(), b.path()).unwrap();
        let ha = sha256_hex(&fs::read(a.path().join("manifest.json")).unwrap());
        let hb = sha256_hex(&fs::read(b.path().join("manifest.json")).unwrap());
        assert_eq!(ha, hb);
        let fa = fs::read(a.path().join("traj_000004/o_002.ppm")).unwrap();
        let fb = fs::read(b.path().join("traj_000004/o_002.ppm")).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn emitted_trajectories_pass_filters_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&small(), dir.path()).unwrap();
        assert_eq!(m.trajectories.len(), 15);
        assert!(m.avg_step_size > 0.0);
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 12);
        assert_eq!(ds.eval.len(), 3);
        for t in ds.train.iter().chain(&ds.eval) {
            assert!(t.len() >= 3);
            for a in t.actions() {
                let (dx, dy, dyaw) = a.components().unwrap();
                assert!(dx >= 0.0 && dx.abs() <= 0.99 && dy.abs() <= 0.99 && dyaw.abs() <= 0.99);
            }
            for (r, p) in t.replay().iter().zip(t.poses()) {
                assert!(r.distance(&p) < 1e-6, "replay drift");
            }
            let map = ds.map_for(t).unwrap();
            let (gx, gy) = map.center(map.goal_cell);
            let fp = t.final_pose();
            assert!((fp.x - gx).hypot(fp.y - gy) < 0.5);
        }
    }
}
