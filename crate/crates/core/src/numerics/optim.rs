use serde::{Deserialize, Serialize};

use super::{NumericsError, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn for_shapes<'a>(sizes: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|t| (vec![T::zero(); t.numel()], vec![T::zero(); t.numel()]))
            .unzip();
        Self { step: 0, m, v }
    }
}

/// One AdamW update with bias correction. Weight decay is decoupled: it
/// shrinks the parameter by `lr * weight_decay` independently of the
/// gradient-based step.
pub fn adam_step<T: Real>(
    params: Vec<&mut Tensor<T>>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(NumericsError::Contract {
            op: "adam_step",
            msg: format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.numel() != g.len() || m.len() != g.len() {
            return Err(NumericsError::Shape {
                op: "adam_step",
                lhs: p.shape.clone(),
                rhs: vec![g.len()],
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let c1 = one - T::lit(cfg.beta1.powi(t));
    let c2 = one - T::lit(cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    let decay = T::lit(cfg.lr * cfg.weight_decay);
    let eps = T::lit(cfg.eps);
    for (i, p) in params.into_iter().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads[i]);
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            let w = p.data[j];
            p.data[j] = w - decay * w - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
