use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TokenizerError;
use crate::worldsim::Image;

const MAGIC: &[u8; 4] = b"UWCB";
pub const CHANNELS: usize = 3;

/// Frozen patch codebook. Entries live in the unit pixel scale
/// (byte value / 255), laid out entry-major as `patch_h × patch_w × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub n: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub entries: Vec<f32>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cuts an image into row-major patches, each flattened `(py, px, c)`.
pub fn extract_patches(img: &Image, ph: usize, pw: usize) -> Result<Vec<f32>, TokenizerError> {
    if ph == 0 || pw == 0 || img.width % pw != 0 || img.height % ph != 0 {
        return Err(TokenizerError::Dimension(format!(
            "{}x{} image is not divisible into {ph}x{pw} patches",
            img.height, img.width
        )));
    }
    let mut out = Vec::with_capacity(img.data.len());
    for gy in 0..img.height / ph {
        for gx in 0..img.width / pw {
            for py in 0..ph {
                let row = (gy * ph + py) * img.width + gx * pw;
                for &b in &img.data[row * 3..(row + pw) * 3] {
                    out.push(b as f32 / 255.0);
                }
            }
        }
    }
    Ok(out)
}

impl Codebook {
    pub fn dim(&self) -> usize {
        self.patch_h * self.patch_w * CHANNELS
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.entries[i * d..(i + 1) * d]
    }

    pub fn tokens_per_image(&self, width: usize, height: usize) -> usize {
        (width / self.patch_w) * (height / self.patch_h)
    }

    /// Nearest entry by squared distance; ties go to the lowest index.
    pub fn nearest(&self, patch: &[f32]) -> usize {
        let mut best = (f32::INFINITY, 0);
        for i in 0..self.n {
            let d = sq_dist(patch, self.entry(i));
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn encode_image(&self, img: &Image) -> Result<Vec<u32>, TokenizerError> {
        let patches = extract_patches(img, self.patch_h, self.patch_w)?;
        Ok(patches.chunks(self.dim()).map(|p| self.nearest(p) as u32).collect())
    }

    pub fn decode_image(&self, codes: &[u32], width: usize, height: usize) -> Result<Image, TokenizerError> {
        if width % self.patch_w != 0 || height % self.patch_h != 0 {
            return Err(TokenizerError::Dimension(format!("{height}x{width} frame vs patch grid")));
        }
        let gw = width / self.patch_w;
        let need = gw * (height / self.patch_h);
        if codes.len() != need {
            return Err(TokenizerError::Dimension(format!("expected {need} image tokens, got {}", codes.len())));
        }
        let mut img = Image::new(width, height);
        for (k, &c) in codes.iter().enumerate() {
            if c as usize >= self.n {
                return Err(TokenizerError::OutOfRange { id: c, what: "codebook" });
            }
            let e = self.entry(c as usize);
            let (gy, gx) = (k / gw, k % gw);
            for py in 0..self.patch_h {
                let row = (gy * self.patch_h + py) * width + gx * self.patch_w;
                let src = &e[py * self.patch_w * CHANNELS..(py + 1) * self.patch_w * CHANNELS];
                for (dst, &v) in img.data[row * 3..(row + self.patch_w) * 3].iter_mut().zip(src) {
                    *dst = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Ok(img)
    }

    /// Row-major `n × n` table of squared distances between entries.
    pub fn distance_table(&self) -> Vec<f32> {
        let mut t = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                t[i * self.n + j] = sq_dist(self.entry(i), self.entry(j));
            }
        }
        t
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * 4);
        out.extend_from_slice(MAGIC);
        for v in [self.n, self.patch_h, self.patch_w, CHANNELS] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.entries {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let bad = |m: &str| TokenizerError::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("not a codebook file"));
        }
        let mut hdr = [0usize; 4];
        for (i, h) in hdr.iter_mut().enumerate() {
            let o = 4 + 4 * i;
            *h = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        }
        let [n, ph, pw, ch] = hdr;
        if ch != CHANNELS || n == 0 || ph == 0 || pw == 0 {
            return Err(bad("unsupported codebook header"));
        }
        let body = &bytes[20..];
        if body.len() != n * ph * pw * ch * 4 {
            return Err(bad("codebook payload length mismatch"));
        }
        let entries = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            n,
            patch_h: ph,
            patch_w: pw,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn assign(patches: &[f32], dim: usize, centers: &[f32], n: usize) -> Vec<(usize, f32)> {
    patches
        .par_chunks(dim)
        .map(|p| {
            let mut best = (0, f32::INFINITY);
            for i in 0..n {
                let d = sq_dist(p, &centers[i * dim..(i + 1) * dim]);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .collect()
}

/// k-means with k-means++ seeding over flattened patches of length
/// `ph·pw·3`. Empty or duplicated clusters are reseeded from the points
/// farthest from their current centers.
pub fn fit_codebook(
    patches: &[f32],
    ph: usize,
    pw: usize,
    n: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook, TokenizerError> {
    let dim = ph * pw * CHANNELS;
    if dim == 0 || n == 0 || patches.len() % dim != 0 {
        return Err(TokenizerError::Dimension("patch buffer does not match patch size".into()));
    }
    let count = patches.len() / dim;
    let distinct: HashSet<Vec<u32>> = patches
        .chunks(dim)
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < n {
        return Err(TokenizerError::TooFewPatches {
            distinct: distinct.len(),
            needed: n,
        });
    }
    let point = |i: usize| &patches[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers = Vec::with_capacity(n * dim);
    centers.extend_from_slice(point(rng.random_range(0..count)));
    let mut d2: Vec<f64> = (0..count).map(|i| sq_dist(point(i), &centers[..dim]) as f64).collect();
    for _ in 1..n {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            chosen.unwrap()
        } else {
            unreachable!("distinct patch count checked above")
        };
        let c = point(pick).to_vec();
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(point(i), &c) as f64);
        }
        centers.extend_from_slice(&c);
    }

    for _ in 0..iters {
        let asg = assign(patches, dim, &centers, n);
        let mut sums = vec![0.0f64; n * dim];
        let mut counts = vec![0usize; n];
        for (i, &(c, _)) in asg.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        for c in 0..n {
            if counts[c] > 0 {
                for k in 0..dim {
                    centers[c * dim + k] = (sums[c * dim + k] / counts[c] as f64) as f32;
                }
            }
        }
        let empty: Vec<usize> = (0..n).filter(|&c| counts[c] == 0).collect();
        reseed(&mut centers, dim, &empty, patches, &asg);
    }
    // snap to the 8-bit grid so decoded frames re-encode exactly
    for v in centers.iter_mut() {
        *v = (*v * 255.0).round() / 255.0;
    }
    dedup_entries(&mut centers, dim, n, patches);
    Ok(Codebook {
        n,
        patch_h: ph,
        patch_w: pw,
        entries: centers,
    })
}

fn reseed(centers: &mut [f32], dim: usize, slots: &[usize], patches: &[f32], asg: &[(usize, f32)]) {
    if slots.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..asg.len()).collect();
    // farthest first; index breaks ties for determinism
    order.sort_by(|&a, &b| asg[b].1.total_cmp(&asg[a].1).then(a.cmp(&b)));
    let mut used: HashSet<Vec<u32>> = HashSet::new();
    let mut it = order.into_iter();
    for &slot in slots {
        for i in it.by_ref() {
            let p = &patches[i * dim..(i + 1) * dim];
            if used.insert(p.iter().map(|v| v.to_bits()).collect()) {
                centers[slot * dim..(slot + 1) * dim].copy_from_slice(p);
                break;
            }
        }
    }
}

fn dedup_entries(centers: &mut [f32], dim: usize, n: usize, patches: &[f32]) {
    loop {
        let mut seen = HashSet::new();
        let dups: Vec<usize> = (0..n)
            .filter(|&c| {
                let key: Vec<u32> = centers[c * dim..(c + 1) * dim].iter().map(|v| v.to_bits()).collect();
                !seen.insert(key)
            })
            .collect();
        if dups.is_empty() {
            return;
        }
        let asg = assign(patches, dim, centers, n);
        reseed(centers, dim, &dups, patches, &asg);
    }
}
