use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative error with a small floor on the denominator so that coordinates
/// whose true gradient is ~0 are judged on absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences of `f` on a random subset
/// of at most `max_coords` coordinates and returns the worst relative error.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    max_coords: usize,
    seed: u64,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.len();
    let picks: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        let mut v = sample(&mut rng, n, max_coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in picks {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
