//! Fits a k-means patch codebook on rendered frames and reports how well
//! quantized images reconstruct the originals.
//!
//! cargo run --example image_codebook

use std::error::Error;

use uniwm::eval::metrics::{psnr, ssim};
use uniwm::tokenizers::{extract_patches, fit_codebook};
use uniwm::worldsim::{generate_map, render_view, Pose};

pub fn run_example() -> Result<f64, Box<dyn Error>> {
    let map = generate_map(11, 16, 16)?;
    let mut frames = Vec::new();
    for (i, &c) in map.free_cells().iter().enumerate().take(40) {
        let (x, y) = map.center(c);
        frames.push(render_view(&map, &Pose::new(x, y, i as f64 * 0.7), 32, 32)?);
    }
    let mut patches = Vec::new();
    for f in &frames[..30] {
        patches.extend(extract_patches(f, 4, 4)?);
    }
    let cb = fit_codebook(&patches, 4, 4, 64, 15, 0)?;
    let mut total = 0.0;
    for f in &frames[30..] {
        let codes = cb.encode_image(f)?;
        let rec = cb.decode_image(&codes, f.width, f.height)?;
        let p = psnr(f, &rec)?;
        total += p;
        println!("{} tokens  PSNR {:.2} dB  SSIM {:.3}", codes.len(), p, ssim(f, &rec)?);
    }
    let mean = total / 10.0;
    println!("held-out mean PSNR {mean:.2} dB with {} codes", cb.n);
    Ok(mean)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
