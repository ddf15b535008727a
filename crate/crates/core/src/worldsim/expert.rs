//! Ground-truth action synthesis: A* over the free grid, then a closed-loop
//! waypoint follower that turns toward and advances onto each path cell.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::{step_pose, wrap_angle, Action, Pose, WorldError, WorldMap};

/// Largest bearing to a waypoint that is handled by a single advance; wider
/// bearings rotate in place first so `dx` never goes negative.
const MAX_ADVANCE_BEARING: f64 = std::f64::consts::FRAC_PI_4;
const MAX_TURN: f64 = 0.9;
const REACHED: f64 = 0.3;
const JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    /// Cap on the translation length of one action, in meters.
    pub max_step: f64,
    /// Uniform multiplicative jitter on magnitudes (±fraction).
    pub jitter: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            max_step: f64::INFINITY,
            jitter: JITTER,
        }
    }
}

/// Shortest 4-connected path from `start` to `goal`, inclusive of both.
pub fn astar(map: &WorldMap, start: usize, goal: usize) -> Option<Vec<usize>> {
    let h = |c: usize| {
        let (x, y) = map.coords(c);
        let (gx, gy) = map.coords(goal);
        x.abs_diff(gx) + y.abs_diff(gy)
    };
    let n = map.cells.len();
    let mut g = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut open = BinaryHeap::new();
    g[start] = 0;
    open.push(Reverse((h(start), start)));
    while let Some(Reverse((_, c))) = open.pop() {
        if c == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for nb in map.neighbors(c) {
            let cand = g[c] + 1;
            if cand < g[nb] {
                g[nb] = cand;
                parent[nb] = c;
                open.push(Reverse((cand + h(nb), nb)));
            }
        }
    }
    None
}

fn jitter<R: Rng>(rng: &mut R, frac: f64) -> f64 {
    if frac <= 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - frac..=1.0 + frac)
    }
}

/// Expert action sequence from `start_pose` (inside `start_cell`) to the
/// center of `goal_cell`.
pub fn plan_expert<R: Rng>(
    map: &WorldMap,
    start_pose: &Pose,
    start_cell: usize,
    goal_cell: usize,
    cfg: &ExpertConfig,
    rng: &mut R,
) -> Result<Vec<Action>, WorldError> {
    if map.cells[start_cell] != 0 || map.cells[goal_cell] != 0 {
        return Err(WorldError::CellNotFree);
    }
    if start_cell == goal_cell {
        return Ok(Vec::new());
    }
    let path = astar(map, start_cell, goal_cell).ok_or(WorldError::Unreachable)?;
    let waypoints: Vec<(f64, f64)> = path.iter().map(|&c| map.center(c)).collect();
    let mut pose = *start_pose;
    let mut actions = Vec::new();
    let mut wp = 1;
    let budget = 8 * path.len() + 16;
    while wp < waypoints.len() {
        if actions.len() > budget {
            return Err(WorldError::Unreachable);
        }
        let (tx, ty) = waypoints[wp];
        let (s, c) = pose.yaw.sin_cos();
        let (vx, vy) = (tx - pose.x, ty - pose.y);
        let (bx, by) = (c * vx + s * vy, -s * vx + c * vy);
        let dist = bx.hypot(by);
        if dist < REACHED {
            wp += 1;
            continue;
        }
        let bearing = by.atan2(bx);
        let action = if bearing.abs() > MAX_ADVANCE_BEARING {
            let turn = bearing.clamp(-MAX_TURN, MAX_TURN) * jitter(rng, cfg.jitter);
            Action::Move {
                dx: 0.0,
                dy: 0.0,
                dyaw: turn.clamp(-0.99, 0.99),
            }
        } else {
            let mut len = dist * jitter(rng, cfg.jitter);
            len = len.min(cfg.max_step);
            let (ux, uy) = (bx / dist, by / dist);
            let arrives = (dist - len).abs() < REACHED;
            let dyaw = if arrives {
                let heading = if wp + 1 < waypoints.len() {
                    let (nx, ny) = waypoints[wp + 1];
                    (ny - ty).atan2(nx - tx)
                } else {
                    pose.yaw
                };
                (wrap_angle(heading - pose.yaw).clamp(-MAX_TURN, MAX_TURN) * jitter(rng, cfg.jitter))
                    .clamp(-0.99, 0.99)
            } else {
                0.0
            };
            Action::Move {
                dx: ux * len,
                dy: uy * len,
                dyaw,
            }
        };
        pose = step_pose(&pose, &action)?;
        actions.push(action);
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::generate_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_box(w: usize, h: usize) -> WorldMap {
        let mut cells = vec![0u8; w * h];
        for x in 0..w {
            cells[x] = 1;
            cells[(h - 1) * w + x] = 1;
        }
        for y in 0..h {
            cells[y * w] = 1;
            cells[y * w + w - 1] = 1;
        }
        WorldMap {
            width: w,
            height: h,
            cells,
            goal_cell: w + 1,
            seed: 0,
        }
    }

    #[test]
    fn same_cell_is_empty_plan() {
        let map = open_box(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = map.index(3, 3);
        let (x, y) = map.center(c);
        let plan = plan_expert(&map, &Pose::new(x, y, 0.0), c, c, &ExpertConfig::default(), &mut rng).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn straight_corridor_is_three_forward_moves() {
        // single free row y = 1 from x = 1..=6
        let mut map = open_box(8, 8);
        for y in 2..7 {
            for x in 1..7 {
                map.cells[y * 8 + x] = 2;
            }
        }
        let start = map.index(1, 1);
        let goal = map.index(4, 1);
        let path = astar(&map, start, goal).unwrap();
        assert_eq!(path.len(), 4);
        let (x, y) = map.center(start);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = plan_expert(&map, &Pose::new(x, y, 0.0), start, goal, &ExpertConfig::default(), &mut rng).unwrap();
        assert_eq!(plan.len(), 3);
        for a in &plan {
            let (dx, dy, dyaw) = a.components().unwrap();
            assert!(dx > 0.8 && dy.abs() < 0.05 && dyaw.abs() < 0.05, "{a:?}");
        }
    }

    #[test]
    fn replay_reaches_goal_for_hundred_cases() {
        let mut reached = 0;
        for seed in 0..100u64 {
            let map = generate_map(seed, 16, 16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let free = map.free_cells();
            let start = free[rng.random_range(0..free.len())];
            let (x, y) = map.center(start);
            let p0 = Pose::new(x, y, rng.random_range(-3.0..3.0));
            let cfg = ExpertConfig {
                max_step: 0.95,
                ..Default::default()
            };
            let plan = plan_expert(&map, &p0, start, map.goal_cell, &cfg, &mut rng).unwrap();
            let mut p = p0;
            for a in &plan {
                let (dx, _, dyaw) = a.components().unwrap();
                assert!(dx >= 0.0 && dyaw.abs() <= 0.99);
                p = step_pose(&p, a).unwrap();
            }
            let (gx, gy) = map.center(map.goal_cell);
            if (p.x - gx).hypot(p.y - gy) < 0.5 {
                reached += 1;
            }
        }
        assert_eq!(reached, 100);
    }
}
