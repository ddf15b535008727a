use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WorldError;

pub const PALETTE_SIZE: u8 = 6;
pub const MIN_MAP_SIZE: usize = 8;

/// Occupancy grid with 1 m cells. `0` is free space, `1..=6` a wall with that
/// palette id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldMap {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
    pub goal_cell: usize,
    pub seed: u64,
}

impl WorldMap {
    pub fn cell(&self, cx: i64, cy: i64) -> u8 {
        if cx < 0 || cy < 0 || cx >= self.width as i64 || cy >= self.height as i64 {
            return 1;
        }
        self.cells[cy as usize * self.width + cx as usize]
    }

    pub fn is_wall(&self, cx: i64, cy: i64) -> bool {
        self.cell(cx, cy) != 0
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        !self.is_wall(x.floor() as i64, y.floor() as i64)
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn index(&self, cx: usize, cy: usize) -> usize {
        cy * self.width + cx
    }

    pub fn center(&self, index: usize) -> (f64, f64) {
        let (cx, cy) = self.coords(index);
        (cx as f64 + 0.5, cy as f64 + 0.5)
    }

    pub fn free_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.cells[i] == 0).collect()
    }

    /// 4-connected free neighbours of a cell.
    pub fn neighbors(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.coords(index);
        let (cx, cy) = (cx as i64, cy as i64);
        [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .into_iter()
            .map(move |(ox, oy)| (cx + ox, cy + oy))
            .filter(|&(x, y)| !self.is_wall(x, y))
            .map(|(x, y)| y as usize * self.width + x as usize)
    }

    /// Free cells reachable from `start` (inclusive), by breadth-first search.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.cells.len()];
        if self.cells[start] != 0 {
            return seen;
        }
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(c) = q.pop_front() {
            for n in self.neighbors(c) {
                if !seen[n] {
                    seen[n] = true;
                    q.push_back(n);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&first) = free.first() else {
            return false;
        };
        let seen = self.reachable_from(first);
        free.iter().all(|&c| seen[c])
    }
}

/// Rooms-and-pillars layout: a walled rectangle with scattered wall blocks.
/// Free space not connected to the largest region is filled in, so every
/// pair of free cells is connected.
pub fn generate_map(seed: u64, width: usize, height: usize) -> Result<WorldMap, WorldError> {
    if width < MIN_MAP_SIZE || height < MIN_MAP_SIZE {
        return Err(WorldError::MapTooSmall { width, height });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_3a95);
    let mut cells = vec![0u8; width * height];
    let side_colors: [u8; 4] = std::array::from_fn(|_| rng.random_range(1..=PALETTE_SIZE));
    for x in 0..width {
        cells[x] = side_colors[0];
        cells[(height - 1) * width + x] = side_colors[1];
    }
    for y in 0..height {
        cells[y * width] = side_colors[2];
        cells[y * width + width - 1] = side_colors[3];
    }

    let interior = (width - 2) * (height - 2);
    let target = interior * 18 / 100;
    let mut placed = 0;
    let mut attempts = 0;
    while placed < target && attempts < 400 {
        attempts += 1;
        let (bw, bh) = if rng.random_bool(0.5) {
            (rng.random_range(1..=3), 1)
        } else {
            (1, rng.random_range(1..=3))
        };
        let x0 = rng.random_range(2..width.saturating_sub(2).max(3));
        let y0 = rng.random_range(2..height.saturating_sub(2).max(3));
        let color = rng.random_range(1..=PALETTE_SIZE);
        for y in y0..(y0 + bh).min(height - 2) {
            for x in x0..(x0 + bw).min(width - 2) {
                if cells[y * width + x] == 0 {
                    cells[y * width + x] = color;
                    placed += 1;
                }
            }
        }
    }

    let mut map = WorldMap {
        width,
        height,
        cells,
        goal_cell: 0,
        seed,
    };
    // keep only the largest free component
    let mut best: Option<Vec<bool>> = None;
    let mut best_size = 0;
    let mut visited = vec![false; map.cells.len()];
    for c in map.free_cells() {
        if visited[c] {
            continue;
        }
        let comp = map.reachable_from(c);
        let size = comp.iter().filter(|&&b| b).count();
        for (v, &b) in visited.iter_mut().zip(&comp) {
            *v |= b;
        }
        if size > best_size {
            best_size = size;
            best = Some(comp);
        }
    }
    let keep = best.expect("interior always has free cells");
    for (i, cell) in map.cells.iter_mut().enumerate() {
        if *cell == 0 && !keep[i] {
            *cell = 1 + (i % PALETTE_SIZE as usize) as u8;
        }
    }
    let free = map.free_cells();
    map.goal_cell = free[rng.random_range(0..free.len())];
    Ok(map)
}
