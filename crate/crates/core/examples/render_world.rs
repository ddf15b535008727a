//! Generates a procedural map, plans an expert path across it and renders
//! the egocentric views along the way as PPM files.
//!
//! cargo run --example render_world

use std::error::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uniwm::worldsim::{generate_map, plan_expert, render_view, step_pose, ExpertConfig, Pose};

pub fn run_example() -> Result<usize, Box<dyn Error>> {
    let map = generate_map(3, 16, 16)?;
    let free = map.free_cells();
    let (start, goal) = (free[0], *free.last().unwrap());
    let (sx, sy) = map.center(start);
    let mut pose = Pose::new(sx, sy, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actions = plan_expert(&map, &pose, start, goal, &ExpertConfig::default(), &mut rng)?;

    let out = std::env::temp_dir().join("uniwm_render_world");
    std::fs::create_dir_all(&out)?;
    render_view(&map, &pose, 64, 64)?.write_ppm(&out.join("view_000.ppm"))?;
    for (i, a) in actions.iter().enumerate() {
        pose = step_pose(&pose, a)?;
        render_view(&map, &pose, 64, 64)?.write_ppm(&out.join(format!("view_{:03}.ppm", i + 1)))?;
    }
    println!("{} moves from cell {start} to cell {goal}, final pose ({:.2}, {:.2}, {:.2})", actions.len(), pose.x, pose.y, pose.yaw);
    println!("frames in {}", out.display());
    Ok(actions.len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
