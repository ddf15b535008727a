use std::ops::Range;

use super::{ModelConfig, ModelError, ModelParams};
use crate::numerics::{Graph, Real, Var};

/// Output of [`trace_forward`]: logits for the requested rows and the leaf
/// handles of every parameter tensor in [`ModelParams::named`] order.
#[derive(Debug, Clone)]
pub struct Traced {
    pub logits: Var,
    pub params: Vec<Var>,
}

pub(crate) fn check_tokens(cfg: &ModelConfig, tokens: &[u32], pos0: usize) -> Result<(), ModelError> {
    if pos0 + tokens.len() > cfg.context_len {
        return Err(ModelError::ContextOverflow {
            len: pos0 + tokens.len(),
            max: cfg.context_len,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(ModelError::Token(t));
    }
    Ok(())
}

/// Records the full causal forward pass on `g`. Logits are produced only for
/// positions in `rows`; the logits at position `i` score token `i + 1`.
pub fn trace_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ModelParams<T>,
    cfg: &ModelConfig,
    tokens: &[u32],
    rows: Range<usize>,
) -> Result<Traced, ModelError> {
    check_tokens(cfg, tokens, 0)?;
    if rows.start > rows.end || rows.end > tokens.len() {
        return Err(ModelError::Config(format!("logit rows {rows:?} outside {} tokens", tokens.len())));
    }
    let params: Vec<Var> = p.tensors().into_iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let (d, nh, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let q_scale = T::lit(1.0 / (hd as f64).sqrt());
    let embed = params[0];
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let mut x = g.embedding(embed, &ids)?;
    for l in 0..cfg.n_layers {
        let w = &params[1 + 6 * l..1 + 6 * (l + 1)];
        let h = g.rmsnorm(x, w[0])?;
        let qkv = g.matmul(h, w[1])?;
        let q = g.slice(qkv, 1, 0, d)?;
        let q = g.rope(q, nh, 0, cfg.rope_base)?;
        let q = g.scale(q, q_scale);
        let k = g.slice(qkv, 1, d, 2 * d)?;
        let k = g.rope(k, nh, 0, cfg.rope_base)?;
        let v = g.slice(qkv, 1, 2 * d, 3 * d)?;
        let mut heads = Vec::with_capacity(nh);
        for hh in 0..nh {
            let (a, b) = (hh * hd, (hh + 1) * hd);
            let qh = g.slice(q, 1, a, b)?;
            let kh = g.slice(k, 1, a, b)?;
            let kt = g.transpose(kh);
            let vh = g.slice(v, 1, a, b)?;
            let s = g.matmul(qh, kt)?;
            let pr = g.causal_softmax(s, 0);
            heads.push(g.matmul(pr, vh)?);
        }
        let o = g.concat(&heads, 1)?;
        let o = g.matmul(o, w[2])?;
        x = g.add(x, o)?;
        let h = g.rmsnorm(x, w[3])?;
        let u = g.matmul(h, w[4])?;
        let u = g.silu(u);
        let u = g.matmul(u, w[5])?;
        x = g.add(x, u)?;
    }
    let xr = g.slice(x, 0, rows.start, rows.end)?;
    let fin = *params.last().expect("final norm");
    let xr = g.rmsnorm(xr, fin)?;
    let et = g.transpose(embed);
    let logits = g.matmul(xr, et)?;
    Ok(Traced { logits, params })
}
