use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::worldsim::{Image, Pose};

/// Zero-MSE PSNR convention.
pub const PSNR_CAP: f64 = 99.0;

/// Fraction of final poses strictly closer than `threshold` to their goal.
pub fn success_rate(finals: &[Pose], goals: &[(f64, f64)], threshold: f64) -> Result<f64, EvalError> {
    if finals.len() != goals.len() {
        return Err(EvalError::Length { pred: finals.len(), gt: goals.len() });
    }
    if finals.is_empty() {
        return Ok(0.0);
    }
    let hits = finals.iter().zip(goals).filter(|(p, g)| (p.x - g.0).hypot(p.y - g.1) < threshold).count();
    Ok(hits as f64 / finals.len() as f64)
}

fn check_pair(pred: &[Pose], gt: &[Pose]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Length { pred: pred.len(), gt: gt.len() });
    }
    if pred.len() < 2 {
        return Err(EvalError::TooShort(pred.len()));
    }
    Ok(())
}

/// RMSE of per-index position errors. Both trajectories start from the same
/// pose, so no alignment is applied.
pub fn ate(pred: &[Pose], gt: &[Pose]) -> Result<f64, EvalError> {
    check_pair(pred, gt)?;
    let se: f64 = pred.iter().zip(gt).map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

/// RMSE over steps of the difference between world-frame displacements.
pub fn rpe(pred: &[Pose], gt: &[Pose]) -> Result<f64, EvalError> {
    check_pair(pred, gt)?;
    let n = pred.len() - 1;
    let se: f64 = (0..n)
        .map(|i| {
            let (dxp, dyp) = (pred[i + 1].x - pred[i].x, pred[i + 1].y - pred[i].y);
            let (dxg, dyg) = (gt[i + 1].x - gt[i].x, gt[i + 1].y - gt[i].y);
            (dxp - dxg).powi(2) + (dyp - dyg).powi(2)
        })
        .sum();
    Ok((se / n as f64).sqrt())
}

/// Repeats the last pose until `len` entries; used to compare rollouts that
/// stop earlier or later than the reference.
pub fn pad_poses(poses: &[Pose], len: usize) -> Vec<Pose> {
    let mut out = poses.to_vec();
    if let Some(&last) = poses.last() {
        out.resize(len.max(poses.len()), last);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    /// Side of the uniform square window.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 8, k1: 0.01, k2: 0.03 }
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<(), EvalError> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean SSIM over every window position and channel.
pub fn ssim_with(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let w = cfg.window;
    if w == 0 || w > a.width || w > a.height {
        return Err(EvalError::Dimension(format!("window {w} on {}x{}", a.width, a.height)));
    }
    let c1 = (cfg.k1 * 255.0).powi(2);
    let c2 = (cfg.k2 * 255.0).powi(2);
    let n = (w * w) as f64;
    let (nx, ny) = (a.width - w + 1, a.height - w + 1);
    let mut total = 0.0;
    for c in 0..3 {
        for y0 in 0..ny {
            for x0 in 0..nx {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + w {
                    for x in x0..x0 + w {
                        let o = (y * a.width + x) * 3 + c;
                        let (u, v) = (a.data[o] as f64, b.data[o] as f64);
                        sa += u;
                        sb += v;
                        saa += u * u;
                        sbb += v * v;
                        sab += u * v;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    Ok(total / (3 * nx * ny) as f64)
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    ssim_with(a, b, &SsimConfig::default())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(&u, &v)| (u as f64 - v as f64).powi(2)).sum();
    Ok(s / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    Ok(psnr_from_mse(mse(a, b)?))
}
