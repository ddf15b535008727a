use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tokenizers::{
    build_both_sample, build_planner_sample, build_world_sample, encode_pose, Codebook, MapExtent, PromptParts,
    Role, TokenSample, VocabLayout,
};
use crate::worldsim::{Action, Trajectory};

/// How substeps are turned into training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepStrategy {
    /// Separate planner and world-model samples, alternated in batches.
    #[default]
    Interleave,
    /// One sample per step predicting the action and the next frame.
    PredictBoth,
}

impl StepStrategy {
    pub fn name(self) -> &'static str {
        match self {
            StepStrategy::Interleave => "interleave",
            StepStrategy::PredictBoth => "predict_both",
        }
    }
}

/// A trajectory with every frame quantized to codebook indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTrajectory {
    pub id: usize,
    pub pose: [u32; 3],
    pub start: Vec<u32>,
    pub goal: Vec<u32>,
    /// `o_1 .. o_T`.
    pub frames: Vec<Vec<u32>>,
    pub actions: Vec<Action>,
}

impl EncodedTrajectory {
    /// Observation at step `t`, where step 0 is the start view.
    pub fn obs(&self, t: usize) -> &[u32] {
        if t == 0 {
            &self.start
        } else {
            &self.frames[t - 1]
        }
    }

    /// Up to `extra` earlier frames before step `t`, oldest first, padded
    /// with the start view.
    pub fn history(&self, t: usize, extra: usize) -> Vec<Vec<u32>> {
        (1..=extra).rev().map(|back| self.obs(t.saturating_sub(back)).to_vec()).collect()
    }
}

pub fn encode_trajectories(
    trajs: &[Trajectory],
    codebook: &Codebook,
    layout: &VocabLayout,
    extent: MapExtent,
) -> Result<Vec<EncodedTrajectory>, TrainError> {
    trajs
        .par_iter()
        .map(|t| {
            Ok(EncodedTrajectory {
                id: t.id,
                pose: encode_pose(layout, &t.p0, extent)?,
                start: codebook.encode_image(&t.start)?,
                goal: codebook.encode_image(&t.goal)?,
                frames: t
                    .steps
                    .iter()
                    .map(|s| codebook.encode_image(&s.obs))
                    .collect::<Result<_, _>>()?,
                actions: t.actions(),
            })
        })
        .collect()
}

/// Reference to one training sample: trajectory index, step and role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub traj: usize,
    pub t: usize,
    pub role: Role,
}

/// Enumerates samples: per trajectory of `T` moves, `T + 1` planner samples
/// (the last one targets STOP) and `T` world-model samples, or `T + 1`
/// joint samples.
pub fn enumerate_samples(data: &[EncodedTrajectory], strategy: StepStrategy) -> Vec<SampleRef> {
    let mut out = Vec::new();
    for (i, tr) in data.iter().enumerate() {
        let n = tr.actions.len();
        match strategy {
            StepStrategy::Interleave => {
                out.extend((0..=n).map(|t| SampleRef { traj: i, t, role: Role::Planner }));
                out.extend((0..n).map(|t| SampleRef { traj: i, t, role: Role::WorldModel }));
            }
            StepStrategy::PredictBoth => {
                out.extend((0..=n).map(|t| SampleRef { traj: i, t, role: Role::Both }));
            }
        }
    }
    out
}

/// Assembles the token sample for `r`. `context_frames` counts the current
/// frame, so `1` means no extra history.
pub fn build_sample(
    data: &[EncodedTrajectory],
    r: &SampleRef,
    layout: &VocabLayout,
    context_frames: usize,
    context_len: usize,
) -> Result<TokenSample, TrainError> {
    let tr = &data[r.traj];
    let history = tr.history(r.t, context_frames.saturating_sub(1));
    let parts = PromptParts {
        pose: tr.pose,
        start: &tr.start,
        goal: &tr.goal,
        history: &history,
        current: tr.obs(r.t),
    };
    let action = tr.actions.get(r.t).copied().unwrap_or(Action::Stop);
    let s = match r.role {
        Role::Planner => build_planner_sample(layout, &parts, &action, context_len)?,
        Role::WorldModel => build_world_sample(layout, &parts, &action, tr.obs(r.t + 1), context_len)?,
        Role::Both => {
            let next = (!action.is_stop()).then(|| tr.obs(r.t + 1));
            build_both_sample(layout, &parts, &action, next, context_len)?
        }
    };
    Ok(s)
}

/// Shuffles per epoch and fills batches by alternating planner and
/// world-model samples; joint samples are simply shuffled.
pub fn make_interleaved_batches(
    samples: &[SampleRef],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<SampleRef>>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut plan: Vec<SampleRef> = samples.iter().copied().filter(|s| s.role != Role::WorldModel).collect();
    let mut world: Vec<SampleRef> = samples.iter().copied().filter(|s| s.role == Role::WorldModel).collect();
    plan.shuffle(&mut rng);
    world.shuffle(&mut rng);
    let mut order = Vec::with_capacity(samples.len());
    let (mut p, mut w) = (plan.into_iter(), world.into_iter());
    loop {
        match (p.next(), w.next()) {
            (None, None) => break,
            (a, b) => order.extend(a.into_iter().chain(b)),
        }
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
