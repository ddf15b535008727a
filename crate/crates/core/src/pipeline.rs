//! End-to-end steps behind the command-line tool: dataset generation,
//! codebook fitting, training with checkpoints, rollout dumps, evaluation
//! and comparison reports.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, TokenizerConfig};
use crate::eval::{comparison_table, evaluate, HarnessError, MetricReport, Provenance, ReportTable};
use crate::model::{Checkpoint, ModelConfig, ModelError, ModelParams};
use crate::rollout::{closed_loop_replay, rollout, write_dump, Episode, MemoryMode, RolloutError, Transformer};
use crate::tokenizers::{encode_pose, extract_patches, fit_codebook, Codebook, MapExtent, TokenizerError, VocabLayout};
use crate::training::{
    encode_trajectories, CsvLog, EncodedTrajectory, EpochStats, LogSink, StepRecord, StepStrategy, TrainError,
    TrainState, TrainSummary, Trainer,
};
use crate::worldsim::{build_dataset, sha256_hex, Dataset, Manifest, Trajectory, WorldError};

pub const MODEL_FILE: &str = "model.ckpt";
pub const CODEBOOK_FILE: &str = "codebook.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EPOCHS_FILE: &str = "epochs.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("refusing to overwrite {0} (pass --force or --resume)")]
    Refused(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Eval(#[from] HarnessError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 0 ok, 2 config or usage error, 3 refusal to overwrite, 4 missing
    /// artifact, 5 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) => 2,
            RunError::Refused(_) => 3,
            RunError::Missing(_) => 4,
            _ => 5,
        }
    }
}

fn require(path: &Path, what: &str) -> Result<(), RunError> {
    if path.exists() {
        Ok(())
    } else {
        Err(RunError::Missing(format!("{what} {}", path.display())))
    }
}

/// Generates the dataset into `out`. An existing dataset is only replaced
/// with `force`.
pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<Manifest, RunError> {
    let manifest = out.join("manifest.json");
    if manifest.exists() {
        if !force {
            return Err(RunError::Refused(out.display().to_string()));
        }
        for e in fs::read_dir(out)? {
            let e = e?;
            let name = e.file_name().to_string_lossy().into_owned();
            if name.starts_with("traj_") && e.file_type()?.is_dir() {
                fs::remove_dir_all(e.path())?;
            }
        }
        fs::remove_file(&manifest)?;
    }
    Ok(build_dataset(&cfg.world, out)?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, RunError> {
    require(&dir.join("manifest.json"), "dataset manifest")?;
    Ok(Dataset::load(dir)?)
}

/// Fits the patch codebook on frames sampled from the training split.
pub fn fit_codebook_on(trajs: &[Trajectory], tok: &TokenizerConfig) -> Result<Codebook, RunError> {
    let frames: Vec<_> = trajs.iter().flat_map(|t| std::iter::once(&t.start).chain(t.steps.iter().map(|s| &s.obs))).collect();
    let first = frames.first().ok_or_else(|| RunError::Missing("training frames".into()))?;
    let per_frame = (first.width / tok.patch) * (first.height / tok.patch);
    let want = tok.max_patches.div_ceil(per_frame.max(1)).min(frames.len());
    let mut rng = ChaCha8Rng::seed_from_u64(tok.seed);
    let mut picks = sample(&mut rng, frames.len(), want).into_vec();
    picks.sort_unstable();
    let mut patches = Vec::new();
    for i in picks {
        patches.extend(extract_patches(frames[i], tok.patch, tok.patch)?);
    }
    Ok(fit_codebook(&patches, tok.patch, tok.patch, tok.codebook_size, tok.kmeans_iters, tok.seed)?)
}

pub fn extent_of(ds: &Dataset) -> MapExtent {
    MapExtent { width: ds.manifest.map_width as f64, height: ds.manifest.map_height as f64 }
}

pub fn encode_split(ds: &Dataset, trajs: &[Trajectory], cb: &Codebook, layout: &VocabLayout) -> Result<Vec<EncodedTrajectory>, RunError> {
    Ok(encode_trajectories(trajs, cb, layout, extent_of(ds))?)
}

/// Codebook from `path`, or fitted on the training split and saved there.
pub fn codebook_for(cfg: &RunConfig, ds: &Dataset, path: &Path) -> Result<Codebook, RunError> {
    if path.exists() {
        let cb = Codebook::load(path)?;
        if cb.n != cfg.tokenizer.codebook_size || cb.patch_h != cfg.tokenizer.patch {
            return Err(ConfigError::Invalid(format!(
                "{} holds {} entries of {}x{} patches, config asks for {} of {}x{}",
                path.display(),
                cb.n,
                cb.patch_h,
                cb.patch_w,
                cfg.tokenizer.codebook_size,
                cfg.tokenizer.patch,
                cfg.tokenizer.patch
            ))
            .into());
        }
        return Ok(cb);
    }
    let cb = fit_codebook_on(&ds.train, &cfg.tokenizer)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    cb.save(path)?;
    Ok(cb)
}

/// Metadata stored alongside parameters in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Next batch within `epoch`.
    pub batch: usize,
    pub run_config: RunConfig,
    pub config_hash: String,
    pub dataset_hash: String,
}

struct TrainSink {
    csv: CsvLog,
    out: PathBuf,
    cfg: ModelConfig,
    layout: VocabLayout,
    codebook: Codebook,
    meta: CheckpointMeta,
    epochs: Vec<EpochStats>,
    progress: bool,
    last_print: u64,
}

impl TrainSink {
    fn save(&mut self, state: &TrainState) -> Result<(), TrainError> {
        let mut meta = self.meta.clone();
        meta.batch = state.batch;
        let ck = Checkpoint {
            config: self.cfg.clone(),
            vocab: self.layout,
            step: state.step,
            epoch: state.epoch,
            params: state.params.clone(),
            adam: Some(state.adam.clone()),
            codebook: Some(self.codebook.clone()),
            meta: serde_json::to_value(&meta)?,
        };
        ck.save(&self.out.join(MODEL_FILE))?;
        if state.batch == 0 {
            ck.save(&self.out.join(format!("ckpt_epoch_{:03}.ckpt", state.epoch)))?;
        }
        Ok(())
    }
}

impl LogSink for TrainSink {
    fn step(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        if self.progress && rec.step >= self.last_print + 50 {
            self.last_print = rec.step;
            eprintln!("step {:>6}  epoch {}  {:<11} {:.4}  {:.0}s", rec.step, rec.epoch, rec.role, rec.loss, rec.wallclock);
        }
        self.csv.write(rec)
    }

    fn epoch_end(&mut self, stats: &EpochStats) -> Result<(), TrainError> {
        if self.progress {
            eprintln!(
                "epoch {} done: plan {:?}  world {:?}  ({} steps, {:.0}s)",
                stats.epoch, stats.mean_plan, stats.mean_world, stats.steps, stats.wallclock
            );
        }
        self.epochs.push(stats.clone());
        fs::write(self.out.join(EPOCHS_FILE), serde_json::to_vec_pretty(&self.epochs)?)?;
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<(), TrainError> {
        self.save(state)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub checkpoint: PathBuf,
    /// Per-epoch statistics including those of earlier, resumed runs.
    pub epochs: Vec<EpochStats>,
}

/// Trains into `out` (checkpoints, `train_log.csv`, `epochs.json`). With
/// `resume` the run continues from `out/model.ckpt`.
pub fn train(
    cfg: &RunConfig,
    ds: &Dataset,
    codebook: &Codebook,
    out: &Path,
    resume: bool,
    progress: bool,
) -> Result<TrainOutcome, RunError> {
    cfg.validate()?;
    let model_path = out.join(MODEL_FILE);
    let mcfg = cfg.model_config();
    let layout = cfg.layout();
    let (state, epochs) = if resume {
        require(&model_path, "checkpoint")?;
        let ck = Checkpoint::load(&model_path)?;
        if ck.config != mcfg {
            return Err(ConfigError::Invalid("model section differs from the checkpoint being resumed".into()).into());
        }
        let meta: CheckpointMeta = serde_json::from_value(ck.meta)?;
        let adam = ck.adam.ok_or_else(|| RunError::Missing("optimizer state in checkpoint".into()))?;
        let epochs: Vec<EpochStats> = match fs::read(out.join(EPOCHS_FILE)) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(_) => Vec::new(),
        };
        (TrainState { params: ck.params, adam, step: ck.step, epoch: ck.epoch, batch: meta.batch }, epochs)
    } else {
        if model_path.exists() {
            return Err(RunError::Refused(model_path.display().to_string()));
        }
        (TrainState::new(ModelParams::init(&mcfg, cfg.train.seed)?), Vec::new())
    };
    fs::create_dir_all(out)?;
    if !resume {
        let _ = fs::remove_file(out.join(TRAIN_LOG_FILE));
    }
    fs::write(out.join("config.json"), cfg.to_json())?;
    let data = encode_split(ds, &ds.train, codebook, &layout)?;
    let trainer = Trainer::new(mcfg.clone(), layout, cfg.train.clone(), &data, codebook.distance_table())?;
    let mut sink = TrainSink {
        csv: CsvLog::open(&out.join(TRAIN_LOG_FILE))?,
        out: out.to_path_buf(),
        cfg: mcfg,
        layout,
        codebook: codebook.clone(),
        meta: CheckpointMeta {
            batch: 0,
            run_config: cfg.clone(),
            config_hash: cfg.hash(),
            dataset_hash: ds.manifest_hash.clone(),
        },
        epochs,
        progress,
        last_print: state.step,
    };
    let mut state = state;
    let summary = trainer.run(&mut state, &mut sink)?;
    if summary.truncated || summary.epochs.is_empty() {
        sink.save(&state)?;
    }
    Ok(TrainOutcome { summary, checkpoint: model_path, epochs: sink.epochs })
}

/// Evaluation-time overrides of the memory ablations.
#[derive(Debug, Clone, Default)]
pub struct EvalOverrides {
    pub memory: Option<MemoryMode>,
    pub strategy: Option<StepStrategy>,
    /// `|L_save|`, evenly spaced.
    pub layers: Option<usize>,
    /// Replace trained weights with a fresh initialization from this seed.
    pub random_init: Option<u64>,
    pub max_trajectories: Option<usize>,
}

pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub meta: CheckpointMeta,
    pub codebook: Codebook,
    pub hash: String,
}

pub fn load_model(path: &Path) -> Result<LoadedModel, RunError> {
    require(path, "checkpoint")?;
    let bytes = fs::read(path)?;
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    let meta: CheckpointMeta = serde_json::from_value(checkpoint.meta.clone())?;
    let codebook = checkpoint.codebook.clone().ok_or_else(|| RunError::Missing("codebook in checkpoint".into()))?;
    Ok(LoadedModel { checkpoint, meta, codebook, hash: sha256_hex(&bytes) })
}

/// Resolved inference settings for a loaded model.
fn inference_setup(m: &LoadedModel, run: &RunConfig, ov: &EvalOverrides) -> Result<(ModelConfig, ModelParams<f32>, crate::rollout::RolloutConfig), RunError> {
    let mut mcfg = m.checkpoint.config.clone();
    if let Some(k) = ov.layers {
        mcfg = mcfg.with_save_layer_count(k);
        mcfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    }
    let params = match ov.random_init {
        Some(seed) => ModelParams::init(&mcfg, seed)?,
        None => m.checkpoint.params.clone(),
    };
    let mut rc = run.rollout.clone();
    // the prompt layout must match what the model was trained on
    rc.context_frames = m.meta.run_config.train.context_frames;
    rc.strategy = ov.strategy.unwrap_or(m.meta.run_config.train.strategy);
    if let Some(mode) = ov.memory {
        rc.memory = mode;
    }
    rc.validate()?;
    Ok((mcfg, params, rc))
}

/// Evaluates a checkpoint on the eval split and writes `metrics.json` and
/// `metrics.csv` into `out`.
pub fn eval(run: &RunConfig, ckpt: &Path, ds: &Dataset, ov: &EvalOverrides, out: &Path) -> Result<MetricReport, RunError> {
    let m = load_model(ckpt)?;
    if m.meta.dataset_hash != ds.manifest_hash {
        eprintln!("warning: checkpoint was trained on a different dataset ({})", m.meta.dataset_hash);
    }
    let (mcfg, params, rc) = inference_setup(&m, run, ov)?;
    let bb = Transformer { params: &params, cfg: &mcfg, layout: m.checkpoint.vocab, temperature: rc.sampling.temperature };
    let mut ec = run.eval.clone();
    if ov.max_trajectories.is_some() {
        ec.max_trajectories = ov.max_trajectories;
    }
    let prov = Provenance {
        config_hash: run.hash(),
        dataset_hash: ds.manifest_hash.clone(),
        checkpoint_hash: if ov.random_init.is_some() { format!("random-init:{}", ov.random_init.unwrap()) } else { m.hash.clone() },
    };
    let report = evaluate(&bb, &m.codebook, ds, &ds.eval, "eval", &rc, &ec, prov)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(METRICS_FILE), serde_json::to_vec_pretty(&report)?)?;
    fs::write(out.join(METRICS_CSV_FILE), report.to_csv())?;
    Ok(report)
}

/// Rolls out one trajectory (train or eval) and writes its dump directory.
pub fn rollout_dump(
    run: &RunConfig,
    ckpt: &Path,
    ds: &Dataset,
    id: usize,
    ov: &EvalOverrides,
    out: &Path,
    frames: bool,
    memtrace: bool,
) -> Result<PathBuf, RunError> {
    let tr = ds.find(id).ok_or_else(|| RunError::Missing(format!("trajectory {id}")))?;
    let m = load_model(ckpt)?;
    let (mcfg, params, rc) = inference_setup(&m, run, ov)?;
    let layout = m.checkpoint.vocab;
    let bb = Transformer { params: &params, cfg: &mcfg, layout, temperature: rc.sampling.temperature };
    let enc = EncodedTrajectory {
        id: tr.id,
        pose: encode_pose(&layout, &tr.p0, extent_of(ds))?,
        start: m.codebook.encode_image(&tr.start)?,
        goal: m.codebook.encode_image(&tr.goal)?,
        frames: Vec::new(),
        actions: Vec::new(),
    };
    let ep = Episode::from_encoded(&enc, tr.p0, tr.action_scale, tr.start.width, tr.start.height);
    let res = rollout(&bb, &m.codebook, &ep, &rc)?;
    let replay = if frames { Some(closed_loop_replay(&ds.map_for(tr)?, &res, tr.p0, tr.action_scale)?) } else { None };
    Ok(write_dump(out, &res, replay.as_ref(), frames, memtrace)?)
}

/// Loads `metrics.json` files (or directories holding one) and builds the
/// comparison table. Each row is labelled with its parent directory name.
pub fn report(inputs: &[PathBuf]) -> Result<ReportTable, RunError> {
    if inputs.is_empty() {
        return Err(RunError::Usage("report needs at least one metrics file".into()));
    }
    let mut rows = Vec::new();
    for p in inputs {
        let file = if p.is_dir() { p.join(METRICS_FILE) } else { p.clone() };
        require(&file, "metrics file")?;
        let rep: MetricReport = serde_json::from_slice(&fs::read(&file)?)?;
        let label = file
            .parent()
            .and_then(|d| d.file_name())
            .map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push((label, rep));
    }
    Ok(comparison_table(&rows))
}

/// Writes `report.csv` and `report.txt` for a table.
pub fn write_report(table: &ReportTable, out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), table.to_csv())?;
    fs::write(out.join("report.txt"), table.to_text())?;
    Ok(())
}

/// Copies a checkpoint without its optimizer state. The result evaluates
/// identically but cannot be resumed.
pub fn export_params(ckpt: &Path, out: &Path) -> Result<(), RunError> {
    require(ckpt, "checkpoint")?;
    let mut ck = Checkpoint::load(ckpt)?;
    ck.adam = None;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    ck.save(out)?;
    Ok(())
}
