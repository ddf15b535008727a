//! Inference loop alternating action prediction and next-view imagination,
//! with the intra-step / cross-step memory wired in between.

mod dump;

pub use dump::{memtrace_schema, rollout_dir, write_dump, MemTrace, MemTraceStep, MEMTRACE_SCHEMA_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::metrics::ssim;
use crate::membank::{Memory, MemoryBank, MemoryConfig, MemoryError, MergeMode, MergeTrace, NoMemory};
use crate::model::{decode_in_session, LayerKV, ModelConfig, ModelError, ModelParams, SamplingConfig, Session};
use crate::tokenizers::{
    build_prompt, build_world_prompt, decode_action, encode_action, Codebook, PromptParts, Role, Special,
    TokenizerError, VocabLayout,
};
use crate::training::{EncodedTrajectory, StepStrategy};
use crate::worldsim::{render_view, step_pose, Action, Image, Pose, WorldError, WorldMap};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    Config(String),
    #[error("decoder returned {0:?}")]
    Decode(Vec<u32>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which memory path the rollout uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Plain in-context decoding; the memory bank is never touched.
    Off,
    /// Fuse only the current step's own observation cache.
    Intra,
    /// Gate and fuse the cross-step history as well.
    #[default]
    Full,
}

impl MemoryMode {
    pub fn merge_mode(self) -> Option<MergeMode> {
        match self {
            MemoryMode::Off => None,
            MemoryMode::Intra => Some(MergeMode::IntraOnly),
            MemoryMode::Full => Some(MergeMode::IntraPlusCross),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemoryMode::Off => "off",
            MemoryMode::Intra => "intra",
            MemoryMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(MemoryMode::Off),
            "intra" => Some(MemoryMode::Intra),
            "full" => Some(MemoryMode::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub memory: MemoryMode,
    pub top_k: usize,
    pub gamma: f64,
    /// FIFO bound on the cross-step store.
    pub capacity: Option<usize>,
    pub strategy: StepStrategy,
    /// Frames in the observation context, the current one included.
    pub context_frames: usize,
    pub sampling: SamplingConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_steps: 20,
            memory: MemoryMode::Full,
            top_k: 3,
            gamma: 0.2,
            capacity: None,
            strategy: StepStrategy::Interleave,
            context_frames: 1,
            sampling: SamplingConfig::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_steps == 0 {
            return Err(RolloutError::Config("max_steps must be at least 1".into()));
        }
        if self.context_frames == 0 {
            return Err(RolloutError::Config("context_frames must be at least 1".into()));
        }
        if self.top_k == 0 || !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(RolloutError::Config("top_k must be positive and gamma non-negative".into()));
        }
        if self.capacity == Some(0) {
            return Err(RolloutError::Config("capacity must be positive when set".into()));
        }
        Ok(())
    }

    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig { top_k: self.top_k, gamma: self.gamma, capacity: self.capacity }
    }
}

/// Token-level model interface used by the loop. Implemented by the
/// transformer and by rigged stand-ins in tests.
pub trait Backbone {
    fn layout(&self) -> &VocabLayout;
    /// Layers whose observation K/V feed the memory.
    fn memory_layers(&self) -> Vec<usize>;
    /// K/V of `span` at the memory layers after running `prompt` without
    /// fused memory.
    fn extract(&self, prompt: &[u32], span: (usize, usize)) -> Result<LayerKV<f32>, RolloutError>;
    /// Constrained generation for `role` after `prompt`.
    fn generate(
        &self,
        prompt: &[u32],
        role: Role,
        memory: Option<&LayerKV<f32>>,
        n_img: usize,
        seed: u64,
    ) -> Result<Vec<u32>, RolloutError>;
}

pub struct Transformer<'a> {
    pub params: &'a ModelParams<f32>,
    pub cfg: &'a ModelConfig,
    pub layout: VocabLayout,
    pub temperature: f64,
}

impl Backbone for Transformer<'_> {
    fn layout(&self) -> &VocabLayout {
        &self.layout
    }

    fn memory_layers(&self) -> Vec<usize> {
        self.cfg.save_layers()
    }

    fn extract(&self, prompt: &[u32], span: (usize, usize)) -> Result<LayerKV<f32>, RolloutError> {
        let mut s = Session::new(self.params, self.cfg, None)?;
        let out = s.feed(prompt, Some(span), false)?;
        out.captured.ok_or_else(|| RolloutError::Config("capture produced no K/V".into()))
    }

    fn generate(
        &self,
        prompt: &[u32],
        role: Role,
        memory: Option<&LayerKV<f32>>,
        n_img: usize,
        seed: u64,
    ) -> Result<Vec<u32>, RolloutError> {
        let mut s = Session::new(self.params, self.cfg, memory)?;
        let sampling = SamplingConfig { temperature: self.temperature, seed };
        Ok(decode_in_session(&mut s, &self.layout, prompt, role, n_img, &sampling)?)
    }
}

/// One rollout substep event, recorded in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Reset { t: usize },
    Deposit { t: usize },
    Merge { t: usize, fused_rows: usize },
    Action { t: usize, stop: bool },
    Observation { t: usize },
    AppendCross { t: usize, size: usize },
}

/// Conditioning for one episode: start/goal codes, the start pose and its
/// tokens, and the metres-per-unit scale of normalized actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: usize,
    pub pose_tokens: [u32; 3],
    pub start: Vec<u32>,
    pub goal: Vec<u32>,
    pub p0: Pose,
    pub action_scale: f64,
    pub width: usize,
    pub height: usize,
}

impl Episode {
    pub fn from_encoded(e: &EncodedTrajectory, p0: Pose, action_scale: f64, width: usize, height: usize) -> Self {
        Self {
            id: e.id,
            pose_tokens: e.pose,
            start: e.start.clone(),
            goal: e.goal.clone(),
            p0,
            action_scale,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub id: usize,
    pub memory_mode: MemoryMode,
    /// Decoded actions in normalized units, ending with `Stop` unless
    /// truncated.
    pub actions: Vec<Action>,
    #[serde(skip)]
    pub imagined: Vec<Image>,
    #[serde(skip)]
    pub imagined_codes: Vec<Vec<u32>>,
    /// `p̂_0 .. p̂_M` for `M` moves.
    pub poses: Vec<Pose>,
    pub truncated: bool,
    pub trace: Vec<TraceEvent>,
    pub merges: Vec<MergeTrace>,
    pub cross_size: usize,
}

impl RolloutResult {
    pub fn moves(&self) -> usize {
        self.actions.iter().filter(|a| !a.is_stop()).count()
    }

    pub fn final_pose(&self) -> Pose {
        *self.poses.last().expect("rollout has p0")
    }
}

fn image_codes(layout: &VocabLayout, tokens: &[u32]) -> Result<Vec<u32>, RolloutError> {
    tokens.iter().map(|&t| layout.image_code(t).map_err(RolloutError::from)).collect()
}

/// Observation context of step `s` (0-based): current frame plus up to
/// `extra` earlier ones, oldest first, padded with the start view.
fn context(frames: &[Vec<u32>], s: usize, extra: usize) -> Vec<Vec<u32>> {
    (1..=extra).rev().map(|back| frames[s.saturating_sub(back)].clone()).collect()
}

struct MemoryStep<'m> {
    memory: &'m mut dyn Memory,
    mode: Option<MergeMode>,
}

impl MemoryStep<'_> {
    /// reset → extract/deposit → merge. Returns the fused memory for both
    /// substeps of this step.
    fn prepare(
        &mut self,
        bb: &dyn Backbone,
        prompt: &[u32],
        span: (usize, usize),
        t: usize,
        trace: &mut Vec<TraceEvent>,
        merges: &mut Vec<MergeTrace>,
    ) -> Result<Option<LayerKV<f32>>, RolloutError> {
        let Some(mode) = self.mode else { return Ok(None) };
        self.memory.reset_intra();
        trace.push(TraceEvent::Reset { t });
        let kv = bb.extract(prompt, span)?;
        self.memory.deposit(kv, t)?;
        trace.push(TraceEvent::Deposit { t });
        let (fused, mt) = self.memory.merge(mode)?;
        trace.push(TraceEvent::Merge { t, fused_rows: mt.fused_rows });
        merges.push(mt);
        Ok(Some(fused))
    }

    fn finish(&mut self, t: usize, trace: &mut Vec<TraceEvent>) -> Result<(), RolloutError> {
        if self.mode == Some(MergeMode::IntraPlusCross) {
            self.memory.append_cross()?;
            trace.push(TraceEvent::AppendCross { t, size: self.memory.cross_len() });
        }
        Ok(())
    }
}

fn step_seed(base: u64, t: usize, sub: u64) -> u64 {
    base ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sub.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Runs one episode. `memory` is only touched when the mode is not `Off`.
pub fn run_trajectory(
    bb: &dyn Backbone,
    memory: &mut dyn Memory,
    codebook: &Codebook,
    ep: &Episode,
    cfg: &RolloutConfig,
) -> Result<RolloutResult, RolloutError> {
    cfg.validate()?;
    let layout = *bb.layout();
    let n_img = ep.start.len();
    let mut mem = MemoryStep { memory, mode: cfg.memory.merge_mode() };
    // frames[0] = ô_0 = o_s
    let mut frames = vec![ep.start.clone()];
    let mut res = RolloutResult {
        id: ep.id,
        memory_mode: cfg.memory,
        actions: Vec::new(),
        imagined: Vec::new(),
        imagined_codes: Vec::new(),
        poses: vec![ep.p0],
        truncated: true,
        trace: Vec::new(),
        merges: Vec::new(),
        cross_size: 0,
    };
    for t in 1..=cfg.max_steps {
        let s = t - 1;
        let history = context(&frames, s, cfg.context_frames - 1);
        let parts = PromptParts {
            pose: ep.pose_tokens,
            start: &ep.start,
            goal: &ep.goal,
            history: &history,
            current: &frames[s],
        };
        let prompt = build_prompt(&layout, &parts, Special::TaskPlan)?;
        let fused = mem.prepare(bb, &prompt.tokens, prompt.obs_span, t, &mut res.trace, &mut res.merges)?;
        let (action, next_tokens) = match cfg.strategy {
            StepStrategy::Interleave => {
                let at = bb.generate(&prompt.tokens, Role::Planner, fused.as_ref(), n_img, step_seed(cfg.sampling.seed, t, 0))?;
                let a = decode_action(&layout, &at).map_err(|_| RolloutError::Decode(at.clone()))?;
                res.trace.push(TraceEvent::Action { t, stop: a.is_stop() });
                if a.is_stop() {
                    res.actions.push(a);
                    res.truncated = false;
                    break;
                }
                let wp = build_world_prompt(&layout, &parts, &a)?;
                let ot = bb.generate(&wp.tokens, Role::WorldModel, fused.as_ref(), n_img, step_seed(cfg.sampling.seed, t, 1))?;
                (a, ot)
            }
            StepStrategy::PredictBoth => {
                let out = bb.generate(&prompt.tokens, Role::Both, fused.as_ref(), n_img, step_seed(cfg.sampling.seed, t, 0))?;
                let na = if out.first() == Some(&Special::Stop.id()) { 1 } else { 3.min(out.len()) };
                let a = decode_action(&layout, &out[..na]).map_err(|_| RolloutError::Decode(out.clone()))?;
                res.trace.push(TraceEvent::Action { t, stop: a.is_stop() });
                if a.is_stop() {
                    res.actions.push(a);
                    res.truncated = false;
                    break;
                }
                (a, out[na..].to_vec())
            }
        };
        if next_tokens.len() != n_img {
            return Err(RolloutError::Decode(next_tokens));
        }
        let codes = image_codes(&layout, &next_tokens)?;
        res.imagined.push(codebook.decode_image(&codes, ep.width, ep.height)?);
        res.trace.push(TraceEvent::Observation { t });
        mem.finish(t, &mut res.trace)?;
        let p = step_pose(res.poses.last().unwrap(), &action.scaled(ep.action_scale))?;
        res.poses.push(p);
        res.actions.push(action);
        res.imagined_codes.push(codes.clone());
        frames.push(codes);
    }
    res.cross_size = mem.memory.cross_len();
    Ok(res)
}

/// Builds the memory matching `cfg.memory` and runs the episode.
pub fn rollout(bb: &dyn Backbone, codebook: &Codebook, ep: &Episode, cfg: &RolloutConfig) -> Result<RolloutResult, RolloutError> {
    match cfg.memory {
        MemoryMode::Off => run_trajectory(bb, &mut NoMemory, codebook, ep, cfg),
        _ => {
            let mut bank = MemoryBank::new(cfg.memory_config(), &bb.memory_layers(), ep.start.len());
            run_trajectory(bb, &mut bank, codebook, ep, cfg)
        }
    }
}

/// Open-loop imagination from anchor step `anchor`: the world-model substep
/// is applied `actions.len()` times with the given (ground-truth) actions,
/// feeding each imagined frame back. `frames[..=anchor]` are the true
/// observations up to the anchor, `frames[0]` being the start view. Returns
/// the imagined codes after each action.
pub fn imagine_open_loop(
    bb: &dyn Backbone,
    memory: &mut dyn Memory,
    ep: &Episode,
    frames: &[Vec<u32>],
    anchor: usize,
    actions: &[Action],
    cfg: &RolloutConfig,
) -> Result<Vec<Vec<u32>>, RolloutError> {
    cfg.validate()?;
    let layout = *bb.layout();
    let n_img = ep.start.len();
    let mut mem = MemoryStep { memory, mode: cfg.memory.merge_mode() };
    let mut seq: Vec<Vec<u32>> = frames[..=anchor].to_vec();
    let (mut trace, mut merges) = (Vec::new(), Vec::new());
    let mut out = Vec::with_capacity(actions.len());
    for (i, a) in actions.iter().enumerate() {
        let s = anchor + i;
        let t = s + 1;
        let history = context(&seq, s, cfg.context_frames - 1);
        let parts = PromptParts {
            pose: ep.pose_tokens,
            start: &ep.start,
            goal: &ep.goal,
            history: &history,
            current: &seq[s],
        };
        let wp = build_world_prompt(&layout, &parts, a)?;
        let fused = mem.prepare(bb, &wp.tokens, wp.obs_span, t, &mut trace, &mut merges)?;
        let ot = bb.generate(&wp.tokens, Role::WorldModel, fused.as_ref(), n_img, step_seed(cfg.sampling.seed, t, 1))?;
        if ot.len() != n_img {
            return Err(RolloutError::Decode(ot));
        }
        let codes = image_codes(&layout, &ot)?;
        mem.finish(t, &mut trace)?;
        seq.push(codes.clone());
        out.push(codes);
    }
    Ok(out)
}

/// Poses from executing the decoded moves on the true map, with the true
/// view rendered at each (absent when the pose ends up inside a wall) and
/// its SSIM against the imagined frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub poses: Vec<Pose>,
    pub true_views: Vec<Option<Image>>,
    pub ssim: Vec<Option<f64>>,
}

pub fn closed_loop_replay(map: &WorldMap, result: &RolloutResult, p0: Pose, action_scale: f64) -> Result<ReplayResult, RolloutError> {
    let mut poses = vec![p0];
    let (mut views, mut scores) = (Vec::new(), Vec::new());
    for (a, imag) in result.actions.iter().filter(|a| !a.is_stop()).zip(&result.imagined) {
        let p = step_pose(poses.last().unwrap(), &a.scaled(action_scale))?;
        poses.push(p);
        match render_view(map, &p, imag.width, imag.height) {
            Ok(v) => {
                scores.push(Some(ssim(imag, &v).map_err(|e| RolloutError::Config(e.to_string()))?));
                views.push(Some(v));
            }
            Err(WorldError::PoseInWall { .. }) => {
                scores.push(None);
                views.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ReplayResult { poses, true_views: views, ssim: scores })
}

/// Encodes a ground-truth action sequence into planner targets; handy for
/// rigged backbones.
pub fn action_tokens(layout: &VocabLayout, a: &Action) -> Result<Vec<u32>, RolloutError> {
    Ok(encode_action(layout, a)?)
}
