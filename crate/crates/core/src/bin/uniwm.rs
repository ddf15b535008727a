use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uniwm::config::{run_config_schema, RunConfig};
use uniwm::pipeline::{self, EvalOverrides, RunError};
use uniwm::rollout::{memtrace_schema, MemoryMode};
use uniwm::sweep::{run_sweep, SweepAxis};
use uniwm::training::StepStrategy;

#[derive(Parser)]
#[command(name = "uniwm", version, about = "Navigation world model: data, training, rollout and evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the procedural dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Fit the patch codebook on the training split.
    FitCodebook {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; checkpoints and logs go to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Existing codebook; fitted and saved to <out>/codebook.bin if absent.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        /// bin-rec, bin-ls, ls-rec or ls-ls.
        #[arg(long)]
        loss_ablation: Option<String>,
    },
    /// Roll out one trajectory and dump actions, poses, frames and the memory trace.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        memory: Option<Mem>,
        #[arg(long)]
        dump_frames: bool,
        #[arg(long)]
        dump_memtrace: bool,
    },
    /// Evaluate a checkpoint on the eval split and write metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        memory: Option<Mem>,
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        /// 1, 3, 5, 7 or all.
        #[arg(long)]
        layers: Option<String>,
        /// Evaluate freshly initialized weights from this seed instead.
        #[arg(long)]
        random_init: Option<u64>,
        #[arg(long)]
        max_trajectories: Option<usize>,
    },
    /// Compare metrics files (or directories containing metrics.json).
    Report {
        inputs: Vec<PathBuf>,
        /// Also write report.csv and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation sweep from one config template.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
    },
    /// Copy a checkpoint without optimizer state.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the JSON schemas for run configs and memory traces.
    Schema {
        #[arg(long, default_value = "schemas")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mem {
    Off,
    Intra,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Interleave,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Tokens,
    Layers,
    Loss,
    Strategy,
}

impl From<Mem> for MemoryMode {
    fn from(m: Mem) -> Self {
        match m {
            Mem::Off => MemoryMode::Off,
            Mem::Intra => MemoryMode::Intra,
            Mem::Full => MemoryMode::Full,
        }
    }
}

fn run_config(explicit: Option<&Path>, ckpt: &Path) -> Result<RunConfig, RunError> {
    match explicit {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(pipeline::load_model(ckpt)?.meta.run_config),
    }
}

fn layers_arg(s: &str, ckpt: &Path) -> Result<usize, RunError> {
    match s {
        "all" => Ok(pipeline::load_model(ckpt)?.checkpoint.config.n_layers),
        _ => s
            .parse()
            .ok()
            .filter(|&k| k > 0)
            .ok_or_else(|| RunError::Usage(format!("--layers expects a positive count or `all`, got {s}"))),
    }
}

fn run(cmd: Cmd) -> Result<(), RunError> {
    match cmd {
        Cmd::GenData { config, out, force } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            let m = pipeline::gen_data(&cfg, &out, force)?;
            println!(
                "{} train / {} eval trajectories, avg step {:.4}, {} rejected",
                m.n_train, m.n_eval, m.avg_step_size, m.rejected
            );
            println!("{}", out.join("manifest.json").display());
        }
        Cmd::FitCodebook { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            let ds = pipeline::load_dataset(&data)?;
            let cb = pipeline::fit_codebook_on(&ds.train, &cfg.tokenizer)?;
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            cb.save(&out)?;
            println!("{} entries of {}x{} patches -> {}", cb.n, cb.patch_h, cb.patch_w, out.display());
        }
        Cmd::Train { config, data, out, codebook, resume, loss_ablation } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(name) = loss_ablation {
                cfg.train.apply_loss_ablation(&name).map_err(|e| RunError::Usage(e.to_string()))?;
            }
            cfg.validate()?;
            let ds = pipeline::load_dataset(&data)?;
            let cb_path = codebook.unwrap_or_else(|| out.join(pipeline::CODEBOOK_FILE));
            let cb = pipeline::codebook_for(&cfg, &ds, &cb_path)?;
            let o = pipeline::train(&cfg, &ds, &cb, &out, resume, true)?;
            println!("{} steps{} -> {}", o.summary.steps, if o.summary.truncated { " (truncated)" } else { "" }, o.checkpoint.display());
        }
        Cmd::Rollout { checkpoint, data, id, out, config, memory, dump_frames, dump_memtrace } => {
            let cfg = run_config(config.as_deref(), &checkpoint)?;
            let ds = pipeline::load_dataset(&data)?;
            let ov = EvalOverrides { memory: memory.map(Into::into), ..Default::default() };
            let dir = pipeline::rollout_dump(&cfg, &checkpoint, &ds, id, &ov, &out, dump_frames, dump_memtrace)?;
            println!("{}", dir.display());
        }
        Cmd::Eval { checkpoint, data, out, config, memory, strategy, layers, random_init, max_trajectories } => {
            let cfg = run_config(config.as_deref(), &checkpoint)?;
            let ds = pipeline::load_dataset(&data)?;
            let ov = EvalOverrides {
                memory: memory.map(Into::into),
                strategy: strategy.map(|s| match s {
                    Strategy::Interleave => StepStrategy::Interleave,
                    Strategy::Both => StepStrategy::PredictBoth,
                }),
                layers: layers.as_deref().map(|s| layers_arg(s, &checkpoint)).transpose()?,
                random_init,
                max_trajectories,
            };
            let r = pipeline::eval(&cfg, &checkpoint, &ds, &ov, &out)?;
            let a = &r.aggregate;
            println!(
                "memory {}  SR {:.4}  ATE {:.4}  RPE {:.4}  SSIM {}  PSNR {}  ({} trajectories)",
                r.memory_mode.name(),
                a.sr,
                a.ate,
                a.rpe,
                a.ssim.map_or("-".into(), |v| format!("{v:.4}")),
                a.psnr.map_or("-".into(), |v| format!("{v:.2}")),
                a.n_trajectories
            );
            println!("{}", out.join(pipeline::METRICS_FILE).display());
        }
        Cmd::Report { inputs, out } => {
            let t = pipeline::report(&inputs)?;
            print!("{}", t.to_text());
            if let Some(o) = out {
                pipeline::write_report(&t, &o)?;
            }
        }
        Cmd::Sweep { config, data, axis, out } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            let ds = pipeline::load_dataset(&data)?;
            let axis = match axis {
                Axis::Tokens => SweepAxis::Tokens,
                Axis::Layers => SweepAxis::Layers,
                Axis::Loss => SweepAxis::Loss,
                Axis::Strategy => SweepAxis::Strategy,
            };
            let t = run_sweep(&cfg, axis, &ds, &out, true)?;
            print!("{}", t.to_text());
        }
        Cmd::Export { checkpoint, out } => {
            pipeline::export_params(&checkpoint, &out)?;
            println!("{}", out.display());
        }
        Cmd::Schema { out } => {
            std::fs::create_dir_all(&out)?;
            for (name, schema) in [("run_config", run_config_schema()), ("memtrace", memtrace_schema())] {
                let path = out.join(format!("{name}.schema.json"));
                std::fs::write(&path, serde_json::to_string_pretty(&schema)? + "\n")?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
