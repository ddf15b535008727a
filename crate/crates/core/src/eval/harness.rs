use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ate, pad_poses, psnr_from_mse, rpe, ssim_with, success_rate, SsimConfig};
use super::EvalError;
use crate::membank::{Memory, MemoryBank, NoMemory};
use crate::rollout::{closed_loop_replay, imagine_open_loop, rollout, Backbone, Episode, MemoryMode, RolloutConfig, RolloutError};
use crate::tokenizers::{encode_pose, Codebook, MapExtent};
use crate::training::{EncodedTrajectory, StepStrategy};
use crate::worldsim::{Dataset, Image, Trajectory};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const ATE_CONVENTION: &str = "anchored at the shared start pose, no rigid alignment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Horizons of the open-loop `@n` metrics.
    pub n_list: Vec<usize>,
    pub ssim: SsimConfig,
    /// Also execute predicted actions on the true map and score imagined
    /// frames against renders at the predicted poses.
    pub closed_loop: bool,
    /// Evaluate only the first this many trajectories of the split.
    pub max_trajectories: Option<usize>,
    /// Worker threads; all cores when absent, one in deterministic mode.
    pub workers: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_list: vec![1, 5],
            ssim: SsimConfig::default(),
            closed_loop: false,
            max_trajectories: None,
            workers: None,
        }
    }
}

/// Hashes tying a report to its inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub dataset_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub id: usize,
    pub gt_steps: usize,
    pub pred_moves: usize,
    pub stopped: bool,
    pub success: bool,
    pub final_distance: f64,
    pub ate: f64,
    pub rpe: f64,
    /// Imagined frame `ô_t` against the recorded `o_t`, over the steps both
    /// exist; absent if the rollout imagined nothing.
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim_at: BTreeMap<String, f64>,
    pub psnr_at: BTreeMap<String, f64>,
    /// Number of anchors behind each `@n` value.
    pub anchors_at: BTreeMap<String, usize>,
    pub closed_loop_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_trajectories: usize,
    pub sr: f64,
    pub ate: f64,
    pub rpe: f64,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim_at: BTreeMap<String, f64>,
    pub psnr_at: BTreeMap<String, f64>,
    pub closed_loop_ssim: Option<f64>,
    pub stopped_fraction: f64,
    pub mean_pred_moves: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub memory_mode: MemoryMode,
    pub strategy: StepStrategy,
    pub memory_layers: Vec<usize>,
    pub split: String,
    pub sr_threshold: f64,
    pub ate_convention: String,
    pub n_list: Vec<usize>,
    pub provenance: Provenance,
    pub aggregate: Aggregate,
    pub per_trajectory: Vec<TrajectoryMetrics>,
}

struct Frames {
    ssim: f64,
    mse: f64,
}

fn frame_scores(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<Frames, EvalError> {
    Ok(Frames { ssim: ssim_with(a, b, cfg)?, mse: super::metrics::mse(a, b)? })
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Metric(#[from] EvalError),
    #[error(transparent)]
    World(#[from] crate::worldsim::WorldError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizers::TokenizerError),
    #[error("empty evaluation split")]
    Empty,
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Open-loop `@n` metrics for one trajectory. From every anchor `t` a chain
/// of up to `max(n_list)` world-model substeps is imagined with the recorded
/// actions; the `k`-th element of the chain scores `@k`.
pub fn rollout_metrics_at_n(
    bb: &dyn Backbone,
    codebook: &Codebook,
    ep: &Episode,
    enc: &EncodedTrajectory,
    truth: &[&Image],
    n_list: &[usize],
    rcfg: &RolloutConfig,
    ssim_cfg: &SsimConfig,
) -> Result<BTreeMap<usize, (f64, f64, usize)>, HarnessError> {
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    let t_len = enc.actions.len();
    let frames: Vec<Vec<u32>> = (0..=t_len).map(|t| enc.obs(t).to_vec()).collect();
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = n_list.iter().map(|&n| (n, (0.0, 0.0, 0))).collect();
    if max_n == 0 {
        return Ok(acc);
    }
    for anchor in 0..t_len {
        let len = max_n.min(t_len - anchor);
        if !n_list.iter().any(|&n| n <= len) {
            continue;
        }
        let acts = &enc.actions[anchor..anchor + len];
        let chain = match rcfg.memory {
            MemoryMode::Off => imagine_open_loop(bb, &mut NoMemory, ep, &frames, anchor, acts, rcfg)?,
            _ => {
                let mut bank: Box<dyn Memory> =
                    Box::new(MemoryBank::new(rcfg.memory_config(), &bb.memory_layers(), ep.start.len()));
                imagine_open_loop(bb, bank.as_mut(), ep, &frames, anchor, acts, rcfg)?
            }
        };
        for &n in n_list {
            if n == 0 || n > len {
                continue;
            }
            let img = codebook.decode_image(&chain[n - 1], ep.width, ep.height)?;
            let f = frame_scores(&img, truth[anchor + n], ssim_cfg)?;
            let e = acc.get_mut(&n).expect("n in list");
            e.0 += f.ssim;
            e.1 += psnr_from_mse(f.mse);
            e.2 += 1;
        }
    }
    Ok(acc)
}

fn evaluate_one(
    bb: &dyn Backbone,
    codebook: &Codebook,
    ds: &Dataset,
    tr: &Trajectory,
    rcfg: &RolloutConfig,
    ecfg: &EvalConfig,
) -> Result<TrajectoryMetrics, HarnessError> {
    let layout = *bb.layout();
    let extent = MapExtent { width: ds.manifest.map_width as f64, height: ds.manifest.map_height as f64 };
    let enc = EncodedTrajectory {
        id: tr.id,
        pose: encode_pose(&layout, &tr.p0, extent)?,
        start: codebook.encode_image(&tr.start)?,
        goal: codebook.encode_image(&tr.goal)?,
        frames: tr.steps.iter().map(|s| codebook.encode_image(&s.obs)).collect::<Result<_, _>>()?,
        actions: tr.actions(),
    };
    let (w, h) = (tr.start.width, tr.start.height);
    let ep = Episode::from_encoded(&enc, tr.p0, tr.action_scale, w, h);
    let res = rollout(bb, codebook, &ep, rcfg)?;

    let gt = tr.poses();
    let n = gt.len().max(res.poses.len());
    let (pp, gp) = (pad_poses(&res.poses, n), pad_poses(&gt, n));
    let goal = tr.final_pose();
    let final_distance = res.final_pose().distance(&goal);
    let threshold = ds.manifest.avg_step_size;
    let success = success_rate(&[res.final_pose()], &[(goal.x, goal.y)], threshold)? == 1.0;

    let truth = tr.observations();
    let scores: Vec<Frames> = res
        .imagined
        .iter()
        .zip(&truth[1..])
        .map(|(a, b)| frame_scores(a, b, &ecfg.ssim))
        .collect::<Result<_, _>>()?;

    let at = rollout_metrics_at_n(bb, codebook, &ep, &enc, &truth, &ecfg.n_list, rcfg, &ecfg.ssim)?;
    let mut ssim_at = BTreeMap::new();
    let mut psnr_at = BTreeMap::new();
    let mut anchors_at = BTreeMap::new();
    for (k, (s, p, c)) in at {
        anchors_at.insert(k.to_string(), c);
        if c > 0 {
            ssim_at.insert(k.to_string(), s / c as f64);
            psnr_at.insert(k.to_string(), p / c as f64);
        }
    }

    let closed_loop_ssim = if ecfg.closed_loop {
        let map = ds.map_for(tr)?;
        let rep = closed_loop_replay(&map, &res, tr.p0, tr.action_scale)?;
        mean(rep.ssim.into_iter().flatten())
    } else {
        None
    };

    Ok(TrajectoryMetrics {
        id: tr.id,
        gt_steps: tr.len(),
        pred_moves: res.moves(),
        stopped: !res.truncated,
        success,
        final_distance,
        ate: ate(&pp, &gp)?,
        rpe: rpe(&pp, &gp)?,
        ssim: mean(scores.iter().map(|f| f.ssim)),
        psnr: mean(scores.iter().map(|f| psnr_from_mse(f.mse))),
        ssim_at,
        psnr_at,
        anchors_at,
        closed_loop_ssim,
    })
}

pub fn aggregate(per: &[TrajectoryMetrics], n_list: &[usize]) -> Aggregate {
    let n = per.len().max(1) as f64;
    let mut ssim_at = BTreeMap::new();
    let mut psnr_at = BTreeMap::new();
    for k in n_list {
        let key = k.to_string();
        let (mut s, mut p, mut c) = (0.0, 0.0, 0usize);
        for t in per {
            let cnt = t.anchors_at.get(&key).copied().unwrap_or(0);
            if cnt > 0 {
                s += t.ssim_at[&key] * cnt as f64;
                p += t.psnr_at[&key] * cnt as f64;
                c += cnt;
            }
        }
        if c > 0 {
            ssim_at.insert(key.clone(), s / c as f64);
            psnr_at.insert(key, p / c as f64);
        }
    }
    Aggregate {
        n_trajectories: per.len(),
        sr: per.iter().filter(|t| t.success).count() as f64 / n,
        ate: per.iter().map(|t| t.ate).sum::<f64>() / n,
        rpe: per.iter().map(|t| t.rpe).sum::<f64>() / n,
        ssim: mean(per.iter().filter_map(|t| t.ssim)),
        psnr: mean(per.iter().filter_map(|t| t.psnr)),
        ssim_at,
        psnr_at,
        closed_loop_ssim: mean(per.iter().filter_map(|t| t.closed_loop_ssim)),
        stopped_fraction: per.iter().filter(|t| t.stopped).count() as f64 / n,
        mean_pred_moves: per.iter().map(|t| t.pred_moves as f64).sum::<f64>() / n,
    }
}

/// Rolls out every trajectory of `trajs` (in parallel, results ordered by
/// input position) and scores it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<B: Backbone + Sync>(
    bb: &B,
    codebook: &Codebook,
    ds: &Dataset,
    trajs: &[Trajectory],
    split: &str,
    rcfg: &RolloutConfig,
    ecfg: &EvalConfig,
    provenance: Provenance,
) -> Result<MetricReport, HarnessError> {
    let take = ecfg.max_trajectories.unwrap_or(trajs.len()).min(trajs.len());
    if take == 0 {
        return Err(HarnessError::Empty);
    }
    let subset = &trajs[..take];
    let threads = if crate::numerics::deterministic_mode() { Some(1) } else { ecfg.workers };
    let run = || -> Result<Vec<TrajectoryMetrics>, HarnessError> {
        subset.par_iter().map(|t| evaluate_one(bb, codebook, ds, t, rcfg, ecfg)).collect()
    };
    let per = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(MetricReport {
        schema_version: METRICS_SCHEMA_VERSION,
        memory_mode: rcfg.memory,
        strategy: rcfg.strategy,
        memory_layers: bb.memory_layers(),
        split: split.to_owned(),
        sr_threshold: ds.manifest.avg_step_size,
        ate_convention: ATE_CONVENTION.to_owned(),
        n_list: ecfg.n_list.clone(),
        provenance,
        aggregate: aggregate(&per, &ecfg.n_list),
        per_trajectory: per,
    })
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "id,gt_steps,pred_moves,stopped,success,final_distance,ate,rpe,ssim,psnr";

    /// Per-trajectory table with one `ssim@n,psnr@n` column pair per horizon.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut out = String::from(Self::CSV_HEADER);
        for n in &self.n_list {
            out.push_str(&format!(",ssim@{n},psnr@{n}"));
        }
        out.push('\n');
        for t in &self.per_trajectory {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6},{},{}",
                t.id,
                t.gt_steps,
                t.pred_moves,
                t.stopped,
                t.success,
                t.final_distance,
                t.ate,
                t.rpe,
                opt(t.ssim),
                opt(t.psnr)
            ));
            for n in &self.n_list {
                let k = n.to_string();
                out.push_str(&format!(",{},{}", opt(t.ssim_at.get(&k).copied()), opt(t.psnr_at.get(&k).copied())));
            }
            out.push('\n');
        }
        out
    }

    /// Largest absolute difference between numeric fields of two reports'
    /// aggregates and per-trajectory rows; `None` if their shapes differ.
    pub fn max_abs_diff(&self, other: &MetricReport) -> Option<f64> {
        if self.per_trajectory.len() != other.per_trajectory.len() {
            return None;
        }
        let a = serde_json::to_value((&self.aggregate, &self.per_trajectory)).ok()?;
        let b = serde_json::to_value((&other.aggregate, &other.per_trajectory)).ok()?;
        json_max_abs_diff(&a, &b)
    }
}

/// Largest absolute numeric difference between two JSON documents of the same
/// shape; `None` when shapes or non-numeric values differ.
pub fn json_max_abs_diff(a: &serde_json::Value, b: &serde_json::Value) -> Option<f64> {
    use serde_json::Value::*;
    match (a, b) {
        (Number(x), Number(y)) => Some((x.as_f64()? - y.as_f64()?).abs()),
        (Array(x), Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(u, v)| json_max_abs_diff(u, v)).try_fold(0.0f64, |m, d| Some(m.max(d?)))
        }
        (Object(x), Object(y)) if x.len() == y.len() => x
            .iter()
            .map(|(k, u)| json_max_abs_diff(u, y.get(k)?))
            .try_fold(0.0f64, |m, d| Some(m.max(d?))),
        _ if a == b => Some(0.0),
        _ => None,
    }
}
