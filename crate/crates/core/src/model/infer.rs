use super::forward::check_tokens;
use super::kv::{KvBlock, LayerKV};
use super::{ModelConfig, ModelError, ModelParams};
use crate::numerics::kernels::{self, MatRef};
use crate::numerics::Real;

/// Strided `c = a·b + beta·c`.
#[allow(clippy::too_many_arguments)]
fn gemm_strided<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |r: usize, cl: usize, rs: usize, cs: usize| (r - 1) * rs + (cl - 1) * cs + 1;
    assert!(c.len() >= span(m, n, rsc, csc));
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() >= span(m, k, rsa, csa) && b.len() >= span(k, n, rsb, csb));
    // SAFETY: extents checked above; `c` does not alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Logits and captured spans from one [`Session::feed`] call.
#[derive(Debug, Clone)]
pub struct FeedOutput<T> {
    /// `[rows × vocab]`; either every fed position or only the last one.
    pub logits: Vec<T>,
    pub rows: usize,
    pub captured: Option<LayerKV<T>>,
}

impl<T: Real> FeedOutput<T> {
    pub fn row(&self, i: usize) -> &[T] {
        let v = self.logits.len() / self.rows.max(1);
        &self.logits[i * v..(i + 1) * v]
    }

    pub fn last(&self) -> &[T] {
        self.row(self.rows - 1)
    }
}

/// Incremental tape-free decoder with a per-layer KV cache. Fused memory, if
/// given, is prepended to the keys/values of every memory layer and is
/// visible to all query positions.
#[derive(Debug, Clone)]
pub struct Session<'a, T: Real> {
    params: &'a ModelParams<T>,
    cfg: &'a ModelConfig,
    save: Vec<usize>,
    memory: Option<&'a LayerKV<T>>,
    cache_k: Vec<Vec<T>>,
    cache_v: Vec<Vec<T>>,
    pos: usize,
    probe: Option<Vec<T>>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(
        params: &'a ModelParams<T>,
        cfg: &'a ModelConfig,
        memory: Option<&'a LayerKV<T>>,
    ) -> Result<Self, ModelError> {
        let save = cfg.save_layers();
        if let Some(m) = memory {
            if m.layers != save {
                return Err(ModelError::Memory(format!("memory layers {:?}, model expects {save:?}", m.layers)));
            }
            for b in &m.blocks {
                if b.k.len() != b.rows * cfg.d_model || b.v.len() != b.k.len() {
                    return Err(ModelError::Memory(format!(
                        "block of {} rows holds {} key values, width {}",
                        b.rows,
                        b.k.len(),
                        cfg.d_model
                    )));
                }
            }
        }
        Ok(Self {
            params,
            cfg,
            save,
            memory,
            cache_k: vec![Vec::new(); cfg.n_layers],
            cache_v: vec![Vec::new(); cfg.n_layers],
            pos: 0,
            probe: None,
        })
    }

    /// Starts recording the row sums of every attention matrix computed by
    /// later feeds.
    pub fn enable_probe(&mut self) {
        self.probe = Some(Vec::new());
    }

    pub fn probe_row_sums(&self) -> Option<&[T]> {
        self.probe.as_deref()
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Runs `tokens` at the next positions. `capture` is an absolute
    /// half-open position range whose memory-layer K/V are returned; it must
    /// lie inside this chunk.
    pub fn feed(
        &mut self,
        tokens: &[u32],
        capture: Option<(usize, usize)>,
        all_logits: bool,
    ) -> Result<FeedOutput<T>, ModelError> {
        let cfg = self.cfg;
        let p0 = self.pos;
        check_tokens(cfg, tokens, p0)?;
        let r = tokens.len();
        if r == 0 {
            return Err(ModelError::Config("empty feed".into()));
        }
        if let Some((a, b)) = capture {
            if a > b || a < p0 || b > p0 + r {
                return Err(ModelError::Config(format!("capture span {a}..{b} outside chunk {p0}..{}", p0 + r)));
            }
        }
        let (d, nh, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let hid = cfg.hidden_dim();
        let q_scale = T::lit(1.0 / (hd as f64).sqrt());
        let p = self.params;
        let mut x = Vec::with_capacity(r * d);
        for &t in tokens {
            x.extend_from_slice(&p.embed.data[t as usize * d..(t as usize + 1) * d]);
        }
        let mut captured = capture.map(|_| LayerKV::<T>::empty(&self.save));
        let empty = KvBlock::empty();
        for (l, lp) in p.layers.iter().enumerate() {
            let (h, _) = kernels::rmsnorm_rows(&x, r, d, &lp.attn_norm.data);
            let qkv = kernels::matmul(&h, r, d, &lp.wqkv.data, 3 * d);
            let mut q = vec![T::zero(); r * d];
            let mut k = vec![T::zero(); r * d];
            let mut v = vec![T::zero(); r * d];
            for i in 0..r {
                let row = &qkv[i * 3 * d..(i + 1) * 3 * d];
                q[i * d..(i + 1) * d].copy_from_slice(&row[..d]);
                k[i * d..(i + 1) * d].copy_from_slice(&row[d..2 * d]);
                v[i * d..(i + 1) * d].copy_from_slice(&row[2 * d..]);
            }
            kernels::rope_rows(&mut q, r, d, nh, p0, cfg.rope_base, false);
            for e in q.iter_mut() {
                *e *= q_scale;
            }
            kernels::rope_rows(&mut k, r, d, nh, p0, cfg.rope_base, false);
            let save_idx = self.save.iter().position(|&s| s == l);
            if let (Some(si), Some((a, b)), Some(cap)) = (save_idx, capture, captured.as_mut()) {
                let (a, b) = (a - p0, b - p0);
                cap.blocks[si] = KvBlock {
                    rows: b - a,
                    k: k[a * d..b * d].to_vec(),
                    v: v[a * d..b * d].to_vec(),
                };
            }
            self.cache_k[l].extend_from_slice(&k);
            self.cache_v[l].extend_from_slice(&v);
            let mem = match (save_idx, self.memory) {
                (Some(si), Some(m)) => &m.blocks[si],
                _ => &empty,
            };
            let m = mem.rows;
            let ctx = p0 + r;
            let cols = m + ctx;
            let (ck, cv) = (&self.cache_k[l], &self.cache_v[l]);
            let mut o = vec![T::zero(); r * d];
            let mut s = vec![T::zero(); r * cols];
            for hh in 0..nh {
                let off = hh * hd;
                // scores against memory keys, then against cached context keys
                gemm_strided(r, hd, m, &q[off..], (d, 1), mem.k.get(off..).unwrap_or(&[]), (1, d), T::zero(), &mut s, (cols, 1));
                gemm_strided(r, hd, ctx, &q[off..], (d, 1), &ck[off..], (1, d), T::zero(), &mut s[m..], (cols, 1));
                kernels::softmax_rows(&mut s, r, cols, Some(m + p0));
                if let Some(pr) = self.probe.as_mut() {
                    pr.extend(s.chunks(cols).map(|row| row.iter().copied().sum::<T>()));
                }
                gemm_strided(r, m, hd, &s, (cols, 1), mem.v.get(off..).unwrap_or(&[]), (d, 1), T::zero(), &mut o[off..], (d, 1));
                gemm_strided(r, ctx, hd, &s[m..], (cols, 1), &cv[off..], (d, 1), T::one(), &mut o[off..], (d, 1));
            }
            let o = kernels::matmul(&o, r, d, &lp.wo.data, d);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }
            let (h, _) = kernels::rmsnorm_rows(&x, r, d, &lp.mlp_norm.data);
            let mut u = kernels::matmul(&h, r, d, &lp.w1.data, hid);
            for e in u.iter_mut() {
                *e = kernels::silu(*e);
            }
            let u = kernels::matmul(&u, r, hid, &lp.w2.data, d);
            for (xi, ui) in x.iter_mut().zip(&u) {
                *xi += *ui;
            }
        }
        self.pos += r;
        let (first, rows) = if all_logits { (0, r) } else { (r - 1, 1) };
        let (hf, _) = kernels::rmsnorm_rows(&x[first * d..], rows, d, &p.final_norm.data);
        let vocab = cfg.vocab_size;
        let mut logits = vec![T::zero(); rows * vocab];
        kernels::gemm(&hf, MatRef::plain(rows, d), &p.embed.data, MatRef::t(vocab, d), T::zero(), &mut logits);
        Ok(FeedOutput {
            logits,
            rows,
            captured,
        })
    }
}

/// Full-sequence forward: logits for every position plus the captured K/V of
/// `obs_span` at the memory layers.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tokens: &[u32],
    obs_span: Option<(usize, usize)>,
    fused_memory: Option<&LayerKV<T>>,
) -> Result<(Vec<T>, Option<LayerKV<T>>), ModelError> {
    let mut s = Session::new(params, cfg, fused_memory)?;
    let out = s.feed(tokens, obs_span, true)?;
    Ok((out.logits, out.captured))
}
