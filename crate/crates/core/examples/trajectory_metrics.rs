//! Scores a predicted trajectory against ground truth with success rate,
//! ATE and RPE, and compares two rendered frames with SSIM and PSNR.
//!
//! cargo run --example trajectory_metrics

use std::error::Error;

use uniwm::eval::metrics::{ate, psnr, rpe, ssim, success_rate};
use uniwm::worldsim::{generate_map, render_view, Pose};

pub fn run_example() -> Result<f64, Box<dyn Error>> {
    let gt: Vec<Pose> = (0..6).map(|i| Pose::new(i as f64, 0.0, 0.0)).collect();
    // drifts sideways a little more each step
    let pred: Vec<Pose> = (0..6).map(|i| Pose::new(i as f64 * 0.95, 0.04 * (i * i) as f64, 0.0)).collect();
    let a = ate(&pred, &gt)?;
    let r = rpe(&pred, &gt)?;
    let last = pred.last().unwrap();
    let goal = gt.last().unwrap();
    let sr = success_rate(&[*last], &[(goal.x, goal.y)], 1.0)?;
    println!("ATE {a:.4}  RPE {r:.4}  SR {sr:.2} (final distance {:.3})", last.distance(goal));

    let map = generate_map(2, 16, 16)?;
    let (x, y) = map.center(map.free_cells()[5]);
    let view = render_view(&map, &Pose::new(x, y, 0.3), 32, 32)?;
    for turn in [0.05, 0.2, 0.6] {
        let other = render_view(&map, &Pose::new(x, y, 0.3 + turn), 32, 32)?;
        println!("turned {turn:.2} rad: SSIM {:.3}  PSNR {:.2} dB", ssim(&view, &other)?, psnr(&view, &other)?);
    }
    Ok(a)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
