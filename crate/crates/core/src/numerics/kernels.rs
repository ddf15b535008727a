//! Slice-level kernels shared by the autodiff graph and the inference path.
//! Keeping one implementation per op means the two paths compute the same
//! floating point operations in the same order.

use super::Real;

pub const RMS_EPS: f64 = 1e-6;

/// Row-major matrix view description for [`gemm`].
#[derive(Debug, Clone, Copy)]
pub struct MatRef {
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl MatRef {
    pub fn plain(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            transposed: false,
        }
    }

    /// View of a stored `rows × cols` matrix as its transpose.
    pub fn t(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            transposed: true,
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a·b + beta·out` where `a` and `b` may be transposed views.
pub fn gemm<T: Real>(a: &[T], am: MatRef, b: &[T], bm: MatRef, beta: T, out: &mut [T]) {
    let (m, k) = am.logical();
    let (k2, n) = bm.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(a.len(), am.rows * am.cols);
    assert_eq!(b.len(), bm.rows * bm.cols);
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for o in out.iter_mut() {
            *o *= beta;
        }
        return;
    }
    let (rsa, csa) = am.strides();
    let (rsb, csb) = bm.strides();
    // SAFETY: slice lengths were checked against the logical shapes above.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    gemm(a, MatRef::plain(m, k), b, MatRef::plain(k, n), T::zero(), &mut out);
    out
}

/// Number of visible columns for row `row` under a causal mask that keeps
/// `prefix` leading columns visible to every row.
#[inline]
pub fn causal_visible(prefix: usize, row: usize, cols: usize) -> usize {
    (prefix + row + 1).min(cols)
}

/// Softmax over each row. With `causal = Some(prefix)` entries past the
/// causal frontier are set to exactly zero.
pub fn softmax_rows<T: Real>(x: &mut [T], rows: usize, cols: usize, causal: Option<usize>) {
    for r in 0..rows {
        let row = &mut x[r * cols..(r + 1) * cols];
        let vis = causal.map_or(cols, |p| causal_visible(p, r, cols));
        softmax_in_place(&mut row[..vis]);
        for v in row[vis..].iter_mut() {
            *v = T::zero();
        }
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn log_softmax_in_place<T: Real>(row: &mut [T]) {
    let lse = log_sum_exp(row);
    for v in row.iter_mut() {
        *v -= lse;
    }
}

pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Returns normalized rows and the per-row reciprocal RMS.
pub fn rmsnorm_rows<T: Real>(x: &[T], rows: usize, cols: usize, gain: &[T]) -> (Vec<T>, Vec<T>) {
    let eps = T::lit(RMS_EPS);
    let n = T::from_usize(cols).unwrap();
    let mut out = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let ms: T = xr.iter().map(|&v| v * v).sum::<T>() / n;
        let ir = T::one() / (ms + eps).sqrt();
        inv[r] = ir;
        for ((o, &v), &g) in out[r * cols..(r + 1) * cols].iter_mut().zip(xr).zip(gain) {
            *o = v * ir * g;
        }
    }
    (out, inv)
}

/// Rotary position rotation applied independently inside each head.
/// Position of row `r` is `pos0 + r`. `inverse` rotates by the negative angle
/// (used by the backward pass).
pub fn rope_rows<T: Real>(
    x: &mut [T],
    rows: usize,
    d_model: usize,
    n_heads: usize,
    pos0: usize,
    base: f64,
    inverse: bool,
) {
    let hd = d_model / n_heads;
    let half = hd / 2;
    for r in 0..rows {
        let pos = (pos0 + r) as f64;
        for i in 0..half {
            let freq = base.powf(-2.0 * i as f64 / hd as f64);
            let ang = pos * freq;
            let (s, c) = ang.sin_cos();
            let (s, c) = (T::lit(if inverse { -s } else { s }), T::lit(c));
            for h in 0..n_heads {
                let o = r * d_model + h * hd + 2 * i;
                let (x0, x1) = (x[o], x[o + 1]);
                x[o] = x0 * c - x1 * s;
                x[o + 1] = x0 * s + x1 * c;
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
