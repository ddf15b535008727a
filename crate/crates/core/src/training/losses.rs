use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::{Graph, Real, Var};
use crate::tokenizers::{ActionDim, Role, Special, TokenKind, TokenSample, VocabLayout};

/// Action-token objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PlanLoss {
    BinToken,
    LabelSmoothing,
}

/// Image-token objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum WorldLoss {
    Reconstruction,
    LabelSmoothing,
}

/// Logit rows that score the target span of `sample` (row `i` predicts
/// token `i + 1`).
pub fn logit_rows(sample: &TokenSample) -> Result<Range<usize>, TrainError> {
    let pos: Vec<usize> = sample.target_positions().collect();
    let (Some(&a), Some(&b)) = (pos.first(), pos.last()) else {
        return Err(TrainError::Sample("no target positions".into()));
    };
    if a == 0 || b - a + 1 != pos.len() {
        return Err(TrainError::Sample("target span must be contiguous and follow a prompt".into()));
    }
    Ok(a - 1..b)
}

pub fn targets(sample: &TokenSample) -> Vec<u32> {
    sample.target_positions().map(|i| sample.tokens[i]).collect()
}

fn row<T: Real>(g: &mut Graph<T>, logits: Var, i: usize) -> Result<Var, TrainError> {
    Ok(g.slice(logits, 0, i, i + 1)?)
}

/// Mean restricted negative log-likelihood of the action bins, each softmax
/// renormalized over its own dimension's token set, plus full-vocabulary
/// cross-entropy at structural targets (STOP). `logits` is `[n × vocab]`
/// aligned with `targets`.
pub fn loss_plan<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[u32],
    layout: &VocabLayout,
) -> Result<Var, TrainError> {
    let mut bin_terms = Vec::new();
    let mut text_terms = Vec::new();
    for (i, &t) in targets.iter().enumerate() {
        let r = row(g, logits, i)?;
        match layout.kind(t)? {
            TokenKind::Action { dim, .. } if ActionDim::ALL.get(i) == Some(&dim) => {
                let range = layout.action_range(dim);
                let sub = g.slice(r, 1, range.start as usize, range.end as usize)?;
                let lp = g.log_softmax(sub);
                bin_terms.push(g.gather(lp, &[(t - range.start) as usize])?);
            }
            TokenKind::Special(Special::Stop) if targets.len() == 1 => {
                let lp = g.log_softmax(r);
                text_terms.push(g.gather(lp, &[t as usize])?);
            }
            _ => {
                return Err(TrainError::Target(format!(
                    "{} at action position {i}",
                    layout.token_name(t)
                )))
            }
        }
    }
    let mut parts = Vec::new();
    if !bin_terms.is_empty() {
        let n = bin_terms.len();
        let c = g.concat(&bin_terms, 1)?;
        let s = g.sum(c);
        parts.push(g.scale(s, T::lit(-1.0 / n as f64)));
    }
    if !text_terms.is_empty() {
        let c = g.concat(&text_terms, 1)?;
        let s = g.sum(c);
        parts.push(g.scale(s, T::lit(-1.0)));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok(total)
}

/// `-log P(T_x | T_x ∪ {STOP})` at the first action position of a move
/// target: the stop/continue decision that the restricted bin loss leaves
/// unsupervised. Computed as the union cross-entropy of the target bin minus
/// its restricted cross-entropy.
pub fn loss_stop_gate<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    target_x: u32,
    layout: &VocabLayout,
) -> Result<Var, TrainError> {
    let tx = layout.action_range(ActionDim::X);
    if !tx.contains(&target_x) {
        return Err(TrainError::Target(format!("{} is not an x bin", layout.token_name(target_x))));
    }
    let r = row(g, logits, 0)?;
    let stop = Special::Stop.id() as usize;
    let zs = g.slice(r, 1, stop, stop + 1)?;
    let zx = g.slice(r, 1, tx.start as usize, tx.end as usize)?;
    let union = g.concat(&[zs, zx], 1)?;
    let lu = g.log_softmax(union);
    let lx = g.log_softmax(zx);
    let k = (target_x - tx.start) as usize;
    let a = g.gather(lu, &[k + 1])?;
    let b = g.gather(lx, &[k])?;
    let nb = g.scale(b, T::lit(-1.0));
    let d = g.add(a, nb)?;
    let d = g.scale(d, T::lit(-1.0));
    Ok(g.sum(d))
}

/// Expected squared codebook distance to the ground-truth entry under the
/// image-restricted predictive distribution, averaged over positions.
/// `dist` is the row-major `N × N` table of squared entry distances.
pub fn loss_world<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[u32],
    dist: &[f32],
    layout: &VocabLayout,
) -> Result<Var, TrainError> {
    let n = layout.n_image;
    if dist.len() != n * n {
        return Err(TrainError::Sample(format!("distance table has {} entries, expected {}", dist.len(), n * n)));
    }
    let img = layout.image_range();
    let mut d = Vec::with_capacity(targets.len() * n);
    for &t in targets {
        let c = layout.image_code(t).map_err(|_| TrainError::Target(format!("{} is not an image token", layout.token_name(t))))?;
        d.extend(dist[c as usize * n..(c as usize + 1) * n].iter().map(|&v| T::lit(v as f64)));
    }
    let sub = g.slice(logits, 1, img.start as usize, img.end as usize)?;
    let p = g.softmax(sub);
    let dv = g.constant(vec![targets.len(), n], d)?;
    let w = g.mul(p, dv)?;
    let s = g.sum(w);
    Ok(g.scale(s, T::lit(1.0 / targets.len() as f64)))
}

/// Smoothed cross-entropy over the full vocabulary: target weight
/// `1 - ε + ε/V`, every other id `ε/V`, averaged over positions.
pub fn loss_label_smoothing<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[u32],
    eps: f64,
    vocab: usize,
) -> Result<Var, TrainError> {
    let mut w = vec![T::lit(eps / vocab as f64); targets.len() * vocab];
    for (i, &t) in targets.iter().enumerate() {
        if t as usize >= vocab {
            return Err(TrainError::Target(format!("id {t} outside vocabulary")));
        }
        w[i * vocab + t as usize] += T::lit(1.0 - eps);
    }
    let lp = g.log_softmax(logits);
    let wv = g.constant(vec![targets.len(), vocab], w)?;
    let m = g.mul(lp, wv)?;
    let s = g.sum(m);
    Ok(g.scale(s, T::lit(-1.0 / targets.len() as f64)))
}

/// Per-role objective settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub plan: PlanLoss,
    pub world: WorldLoss,
    pub eps: f64,
    pub stop_gate_weight: f64,
}

/// Scalar losses attached to one sample: the total that is differentiated,
/// plus its plan/world components for logging.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub total: Var,
    pub plan: Option<Var>,
    pub world: Option<Var>,
}

/// Builds the role-appropriate objective over `logits` (rows from
/// [`logit_rows`]).
pub fn sample_loss<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    sample: &TokenSample,
    spec: &LossSpec,
    dist: &[f32],
    layout: &VocabLayout,
) -> Result<SampleLoss, TrainError> {
    let tg = targets(sample);
    let vocab = layout.vocab_size();
    let plan_part = |g: &mut Graph<T>, lg: Var, tg: &[u32]| -> Result<Var, TrainError> {
        match spec.plan {
            PlanLoss::LabelSmoothing => loss_label_smoothing(g, lg, tg, spec.eps, vocab),
            PlanLoss::BinToken => {
                let l = loss_plan(g, lg, tg, layout)?;
                if tg.len() == 3 && spec.stop_gate_weight > 0.0 {
                    let gate = loss_stop_gate(g, lg, tg[0], layout)?;
                    let gate = g.scale(gate, T::lit(spec.stop_gate_weight));
                    Ok(g.add(l, gate)?)
                } else {
                    Ok(l)
                }
            }
        }
    };
    let world_part = |g: &mut Graph<T>, lg: Var, tg: &[u32]| -> Result<Var, TrainError> {
        match spec.world {
            WorldLoss::Reconstruction => loss_world(g, lg, tg, dist, layout),
            WorldLoss::LabelSmoothing => loss_label_smoothing(g, lg, tg, spec.eps, vocab),
        }
    };
    match sample.role {
        Role::Planner => {
            let p = plan_part(g, logits, &tg)?;
            Ok(SampleLoss { total: p, plan: Some(p), world: None })
        }
        Role::WorldModel => {
            let w = world_part(g, logits, &tg)?;
            Ok(SampleLoss { total: w, plan: None, world: Some(w) })
        }
        Role::Both => {
            let na = if tg.len() == 1 { 1 } else { 3 };
            let la = g.slice(logits, 0, 0, na)?;
            let p = plan_part(g, la, &tg[..na])?;
            if tg.len() == na {
                return Ok(SampleLoss { total: p, plan: Some(p), world: None });
            }
            let li = g.slice(logits, 0, na, tg.len())?;
            let w = world_part(g, li, &tg[na..])?;
            let total = g.add(p, w)?;
            Ok(SampleLoss { total, plan: Some(p), world: Some(w) })
        }
    }
}
