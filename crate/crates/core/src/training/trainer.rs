use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{build_sample, enumerate_samples, make_interleaved_batches, EncodedTrajectory, SampleRef, StepStrategy};
use super::losses::{logit_rows, sample_loss, LossSpec, PlanLoss, WorldLoss};
use super::TrainError;
use crate::model::{trace_forward, ModelConfig, ModelParams};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Real};
use crate::tokenizers::{TokenSample, VocabLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches whose gradients are averaged into one optimizer step.
    pub grad_accum: usize,
    pub seed: u64,
    pub plan_loss: PlanLoss,
    pub world_loss: WorldLoss,
    /// ε of the label-smoothing objective.
    pub label_smoothing: f64,
    /// Weight of the stop/continue term added to the bin-token loss.
    pub stop_gate_weight: f64,
    pub weight_decay: f64,
    /// Save a checkpoint every this many epochs (and after the last one).
    pub checkpoint_every: usize,
    /// Also save every this many optimizer steps.
    pub checkpoint_steps: Option<u64>,
    pub strategy: StepStrategy,
    /// Frames in the observation context, the current one included.
    pub context_frames: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            epochs: 2,
            batch_size: 8,
            grad_accum: 1,
            seed: 0,
            plan_loss: PlanLoss::BinToken,
            world_loss: WorldLoss::Reconstruction,
            label_smoothing: 0.1,
            stop_gate_weight: 1.0,
            weight_decay: 0.0,
            checkpoint_every: 1,
            checkpoint_steps: None,
            strategy: StepStrategy::Interleave,
            context_frames: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum == 0 || self.checkpoint_every == 0 {
            return bad("epochs, batch_size, grad_accum and checkpoint_every must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if !(self.stop_gate_weight >= 0.0 && self.weight_decay >= 0.0) {
            return bad("stop_gate_weight and weight_decay must be non-negative");
        }
        if self.context_frames == 0 {
            return bad("context_frames must be at least 1");
        }
        if self.max_steps == Some(0) || self.checkpoint_steps == Some(0) {
            return bad("max_steps and checkpoint_steps must be positive when set");
        }
        Ok(())
    }

    /// Applies one of the four loss combinations: `bin-rec`, `bin-ls`,
    /// `ls-rec`, `ls-ls` (planner objective first).
    pub fn apply_loss_ablation(&mut self, name: &str) -> Result<(), TrainError> {
        let (p, w) = name.split_once('-').ok_or_else(|| TrainError::Ablation(name.into()))?;
        self.plan_loss = match p {
            "bin" => PlanLoss::BinToken,
            "ls" => PlanLoss::LabelSmoothing,
            _ => return Err(TrainError::Ablation(name.into())),
        };
        self.world_loss = match w {
            "rec" => WorldLoss::Reconstruction,
            "ls" => WorldLoss::LabelSmoothing,
            _ => return Err(TrainError::Ablation(name.into())),
        };
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            plan: self.plan_loss,
            world: self.world_loss,
            eps: self.label_smoothing,
            stop_gate_weight: self.stop_gate_weight,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Parameters, optimizer moments and the position of the next batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Optimizer steps taken.
    pub step: u64,
    pub epoch: usize,
    /// Index of the next batch within `epoch`.
    pub batch: usize,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>) -> Self {
        let adam = AdamState::for_shapes(params.tensors());
        Self { params, adam, step: 0, epoch: 0, batch: 0 }
    }
}

/// Mean loss of one role over the samples of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub role: String,
    pub loss: f64,
    pub samples: usize,
    pub lr: f64,
    pub wallclock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    pub mean_plan: Option<f64>,
    pub mean_world: Option<f64>,
    pub wallclock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: Vec<EpochStats>,
    /// True when `max_steps` ended the run before the last epoch finished.
    pub truncated: bool,
}

/// Receives progress from [`Trainer::run`].
pub trait LogSink {
    fn step(&mut self, rec: &StepRecord) -> Result<(), TrainError>;
    fn epoch_end(&mut self, _stats: &EpochStats) -> Result<(), TrainError> {
        Ok(())
    }
    fn checkpoint(&mut self, _state: &TrainState) -> Result<(), TrainError> {
        Ok(())
    }
}

impl LogSink for Vec<StepRecord> {
    fn step(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        self.push(rec.clone());
        Ok(())
    }
}

/// `train_log.csv` writer. Appends when the file exists so resumed runs
/// extend the same log.
pub struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    pub const HEADER: &'static str = "step,epoch,role,loss,lr,wallclock";

    pub fn open(path: &Path) -> Result<Self, TrainError> {
        let fresh = !path.exists();
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = BufWriter::new(f);
        if fresh {
            writeln!(out, "{}", Self::HEADER)?;
        }
        Ok(Self { out })
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        writeln!(
            self.out,
            "{},{},{},{:.8},{},{:.3}",
            rec.step, rec.epoch, rec.role, rec.loss, rec.lr, rec.wallclock
        )?;
        self.out.flush()?;
        Ok(())
    }
}

impl LogSink for CsvLog {
    fn step(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        self.write(rec)
    }
}

/// Loss values and parameter gradients for one sample.
#[derive(Debug, Clone)]
pub struct SampleGradients<T> {
    pub loss: f64,
    pub plan: Option<f64>,
    pub world: Option<f64>,
    pub grads: Vec<Vec<T>>,
}

/// Forward, loss and backward for a single sample on a fresh graph.
pub fn sample_gradients<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    sample: &TokenSample,
    spec: &LossSpec,
    dist: &[f32],
    layout: &VocabLayout,
) -> Result<SampleGradients<T>, TrainError> {
    let mut g = Graph::new();
    let rows = logit_rows(sample)?;
    let traced = trace_forward(&mut g, params, cfg, &sample.tokens, rows)?;
    let l = sample_loss(&mut g, traced.logits, sample, spec, dist, layout)?;
    let scalar = |g: &Graph<T>, v| num_traits::ToPrimitive::to_f64(&g.value(v).data[0]).unwrap_or(f64::NAN);
    let (loss, plan, world) = (scalar(&g, l.total), l.plan.map(|v| scalar(&g, v)), l.world.map(|v| scalar(&g, v)));
    g.backward(l.total)?;
    let grads = traced
        .params
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![T::zero(); t.numel()]))
        .collect();
    Ok(SampleGradients { loss, plan, world, grads })
}

#[derive(Default)]
struct RoleAcc {
    sum: f64,
    n: usize,
}

impl RoleAcc {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }
    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Drives optimization over a fixed encoded dataset.
pub struct Trainer<'a> {
    pub model: ModelConfig,
    pub layout: VocabLayout,
    pub cfg: TrainConfig,
    data: &'a [EncodedTrajectory],
    dist: Vec<f32>,
    samples: Vec<SampleRef>,
}

impl<'a> Trainer<'a> {
    /// `dist` is the codebook's squared distance table.
    pub fn new(
        model: ModelConfig,
        layout: VocabLayout,
        cfg: TrainConfig,
        data: &'a [EncodedTrajectory],
        dist: Vec<f32>,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        model.validate()?;
        if model.vocab_size != layout.vocab_size() {
            return Err(TrainError::Config(format!(
                "model vocab {} differs from layout {}",
                model.vocab_size,
                layout.vocab_size()
            )));
        }
        let samples = enumerate_samples(data, cfg.strategy);
        if samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        Ok(Self { model, layout, cfg, data, dist, samples })
    }

    pub fn samples(&self) -> &[SampleRef] {
        &self.samples
    }

    pub fn batches(&self, epoch: usize) -> Result<Vec<Vec<SampleRef>>, TrainError> {
        make_interleaved_batches(&self.samples, self.cfg.batch_size, self.cfg.seed, epoch)
    }

    pub fn sample(&self, r: &SampleRef) -> Result<TokenSample, TrainError> {
        build_sample(self.data, r, &self.layout, self.cfg.context_frames, self.model.context_len)
    }

    /// Runs from `state`'s position to the end of the last epoch or until
    /// `max_steps`. Batch order depends only on `(seed, epoch)`, so a state
    /// restored from a checkpoint continues the same trajectory of updates.
    pub fn run(&self, state: &mut TrainState, sink: &mut dyn LogSink) -> Result<TrainSummary, TrainError> {
        let spec = self.cfg.loss_spec();
        let adam = self.cfg.adam();
        let t0 = Instant::now();
        let mut summary = TrainSummary { steps: 0, epochs: Vec::new(), truncated: false };
        while state.epoch < self.cfg.epochs {
            let batches = self.batches(state.epoch)?;
            let (mut ep_plan, mut ep_world, ep_steps0) = (RoleAcc::default(), RoleAcc::default(), state.step);
            while state.batch < batches.len() {
                if self.cfg.max_steps.is_some_and(|m| state.step >= m) {
                    summary.truncated = true;
                    summary.steps = state.step;
                    return Ok(summary);
                }
                let end = (state.batch + self.cfg.grad_accum).min(batches.len());
                let mut acc: Vec<Vec<f32>> = state.params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
                let (mut plan, mut world, mut n) = (RoleAcc::default(), RoleAcc::default(), 0usize);
                for (bi, batch) in batches[state.batch..end].iter().enumerate() {
                    for r in batch {
                        let sample = self.sample(r)?;
                        let sg = sample_gradients(&state.params, &self.model, &sample, &spec, &self.dist, &self.layout)?;
                        let finite = sg.loss.is_finite() && sg.grads.iter().flatten().all(|v| v.is_finite());
                        if !finite {
                            return Err(TrainError::NonFinite {
                                step: state.step + 1,
                                epoch: state.epoch,
                                batch: state.batch + bi,
                            });
                        }
                        for (a, g) in acc.iter_mut().zip(&sg.grads) {
                            for (x, y) in a.iter_mut().zip(g) {
                                *x += *y;
                            }
                        }
                        plan.add(sg.plan);
                        world.add(sg.world);
                        ep_plan.add(sg.plan);
                        ep_world.add(sg.world);
                        n += 1;
                    }
                }
                let inv = 1.0 / n as f32;
                acc.iter_mut().flatten().for_each(|x| *x *= inv);
                adam_step(state.params.tensors_mut(), &acc, &mut state.adam, &adam)?;
                state.step += 1;
                state.batch = end;
                let wall = t0.elapsed().as_secs_f64();
                for (role, a) in [("planner", &plan), ("world_model", &world)] {
                    if let Some(loss) = a.mean() {
                        sink.step(&StepRecord {
                            step: state.step,
                            epoch: state.epoch,
                            role: role.into(),
                            loss,
                            samples: a.n,
                            lr: self.cfg.lr,
                            wallclock: wall,
                        })?;
                    }
                }
                if self.cfg.checkpoint_steps.is_some_and(|k| state.step % k == 0) && state.batch < batches.len() {
                    sink.checkpoint(state)?;
                }
            }
            let stats = EpochStats {
                epoch: state.epoch,
                steps: state.step - ep_steps0,
                mean_plan: ep_plan.mean(),
                mean_world: ep_world.mean(),
                wallclock: t0.elapsed().as_secs_f64(),
            };
            sink.epoch_end(&stats)?;
            summary.epochs.push(stats);
            state.epoch += 1;
            state.batch = 0;
            if state.epoch % self.cfg.checkpoint_every == 0 || state.epoch == self.cfg.epochs {
                sink.checkpoint(state)?;
            }
        }
        summary.steps = state.step;
        Ok(summary)
    }
}
