use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::Session;
use super::kv::LayerKV;
use super::{ModelConfig, ModelError, ModelParams};
use crate::numerics::Real;
use crate::tokenizers::{ActionDim, Role, Special, VocabLayout};

/// Greedy when `temperature == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub seed: u64,
}

/// Ids the decoder may emit at step `step` of a generation for `role`.
/// Planner: `T_x ∪ {STOP}`, then `T_y`, then `T_φ`. World model: image ids.
/// Joint: the planner triple followed by image ids.
pub fn allowed_ids(layout: &VocabLayout, role: Role, step: usize) -> Vec<Range<u32>> {
    let stop = Special::Stop.id();
    let plan = |s: usize| match s {
        0 => vec![stop..stop + 1, layout.action_range(ActionDim::X)],
        1 => vec![layout.action_range(ActionDim::Y)],
        _ => vec![layout.action_range(ActionDim::Yaw)],
    };
    match role {
        Role::Planner => plan(step),
        Role::WorldModel => vec![layout.image_range()],
        Role::Both if step < 3 => plan(step),
        Role::Both => vec![layout.image_range()],
    }
}

/// Picks an id among `allowed`; everything else is treated as `-inf`.
/// Greedy ties resolve to the lowest id.
pub fn select_token<T: Real>(logits: &[T], allowed: &[Range<u32>], temperature: f64, rng: &mut ChaCha8Rng) -> u32 {
    let ids = allowed.iter().flat_map(|r| r.clone());
    if temperature <= 0.0 {
        let mut best = (T::neg_infinity(), u32::MAX);
        for id in ids {
            let z = logits[id as usize];
            if z > best.0 || (z == best.0 && id < best.1) || best.1 == u32::MAX {
                best = (z, id);
            }
        }
        return best.1;
    }
    let ids: Vec<u32> = ids.collect();
    let zs: Vec<f64> = ids.iter().map(|&i| logits[i as usize].to_f64().unwrap() / temperature).collect();
    let max = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = zs.iter().map(|z| (z - max).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return ids[i];
        }
        u -= wi;
    }
    *ids.last().expect("non-empty mask")
}

fn check_prompt(prompt: &[u32], role: Role) -> Result<(), ModelError> {
    let want = match role {
        Role::Planner | Role::Both => Special::ActMark,
        Role::WorldModel => Special::NextMark,
    };
    if prompt.first() != Some(&Special::Bos.id()) || prompt.last() != Some(&want.id()) {
        return Err(ModelError::MalformedPrompt(format!("{role:?} prompt must start with BOS and end with {want:?}")));
    }
    Ok(())
}

/// Feeds `prompt` into `session` and generates under the role masks.
pub fn decode_in_session<T: Real>(
    session: &mut Session<'_, T>,
    layout: &VocabLayout,
    prompt: &[u32],
    role: Role,
    n_img: usize,
    sampling: &SamplingConfig,
) -> Result<Vec<u32>, ModelError> {
    check_prompt(prompt, role)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let total = match role {
        Role::Planner => 3,
        Role::WorldModel => n_img,
        Role::Both => 3 + n_img,
    };
    let mut out = Vec::with_capacity(total);
    let mut logits = session.feed(prompt, None, false)?.logits;
    for step in 0..total {
        let id = select_token(&logits, &allowed_ids(layout, role, step), sampling.temperature, &mut rng);
        out.push(id);
        if id == Special::Stop.id() || step + 1 == total {
            break;
        }
        logits = session.feed(&[id], None, false)?.logits;
    }
    Ok(out)
}

pub fn decode_constrained<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    layout: &VocabLayout,
    prompt: &[u32],
    role: Role,
    fused_memory: Option<&LayerKV<T>>,
    n_img: usize,
    sampling: &SamplingConfig,
) -> Result<Vec<u32>, ModelError> {
    let mut s = Session::new(params, cfg, fused_memory)?;
    decode_in_session(&mut s, layout, prompt, role, n_img, sampling)
}
