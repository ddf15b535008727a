//! Ablation sweeps: one config template expanded along a single axis, each
//! variant trained (where the axis changes training) and evaluated, then
//! collected into a comparison table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::eval::ReportTable;
use crate::pipeline::{self, EvalOverrides, RunError, MODEL_FILE};
use crate::training::StepStrategy;
use crate::worldsim::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Patch size {8, 4} crossed with history frames {1, 3}.
    Tokens,
    /// Memory layer count {1, 3, 5, 7, all} on one trained model.
    Layers,
    /// The four plan/world loss combinations.
    Loss,
    /// Interleaved substeps against joint prediction.
    Strategy,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tokens" => Some(Self::Tokens),
            "layers" => Some(Self::Layers),
            "loss" => Some(Self::Loss),
            "strategy" => Some(Self::Strategy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepVariant {
    pub name: String,
    /// Variants sharing a key share one trained model.
    pub train_key: String,
    pub config: RunConfig,
    pub overrides: EvalOverrides,
}

/// Expands `template` along `axis`.
pub fn variants(template: &RunConfig, axis: SweepAxis) -> Result<Vec<SweepVariant>, RunError> {
    let mut out = Vec::new();
    match axis {
        SweepAxis::Tokens => {
            for patch in [8, 4] {
                for cf in [1, 3] {
                    let mut c = template.clone();
                    c.tokenizer.patch = patch;
                    c.train.context_frames = cf;
                    c.rollout.context_frames = cf;
                    let n = c.tokens_per_image();
                    let name = format!("tok{n}_ctx{cf}");
                    out.push(SweepVariant { train_key: name.clone(), name, config: c, overrides: EvalOverrides::default() });
                }
            }
        }
        SweepAxis::Layers => {
            let n = template.model.n_layers;
            for k in [1, 3, 5, 7, n] {
                if k > n || out.iter().any(|v: &SweepVariant| v.overrides.layers == Some(k)) {
                    continue;
                }
                let name = if k == n { "layers_all".to_string() } else { format!("layers_{k}") };
                out.push(SweepVariant {
                    name,
                    train_key: "shared".into(),
                    config: template.clone(),
                    overrides: EvalOverrides { layers: Some(k), ..Default::default() },
                });
            }
        }
        SweepAxis::Loss => {
            for name in ["bin-rec", "bin-ls", "ls-rec", "ls-ls"] {
                let mut c = template.clone();
                c.train.apply_loss_ablation(name)?;
                out.push(SweepVariant { name: name.into(), train_key: name.into(), config: c, overrides: EvalOverrides::default() });
            }
        }
        SweepAxis::Strategy => {
            for (name, s) in [("interleave", StepStrategy::Interleave), ("predict_both", StepStrategy::PredictBoth)] {
                let mut c = template.clone();
                c.train.strategy = s;
                c.rollout.strategy = s;
                out.push(SweepVariant { name: name.into(), train_key: name.into(), config: c, overrides: EvalOverrides::default() });
            }
        }
    }
    for v in &out {
        v.config.validate()?;
    }
    Ok(out)
}

/// Runs every variant of a sweep under `out`:
/// `out/train_<key>/` holds codebooks and checkpoints, `out/<name>/` the
/// metrics, and `out/report.{csv,txt}` the comparison table. Finished
/// variants are reused when the sweep is rerun.
pub fn run_sweep(template: &RunConfig, axis: SweepAxis, ds: &Dataset, out: &Path, progress: bool) -> Result<ReportTable, RunError> {
    let vars = variants(template, axis)?;
    fs::create_dir_all(out)?;
    let mut trained: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut metric_dirs = Vec::new();
    for v in &vars {
        let ckpt = match trained.get(&v.train_key) {
            Some(p) => p.clone(),
            None => {
                let dir = out.join(format!("train_{}", v.train_key));
                let ckpt = dir.join(MODEL_FILE);
                if !ckpt.exists() {
                    if progress {
                        eprintln!("sweep: training {}", v.train_key);
                    }
                    let cb = pipeline::codebook_for(&v.config, ds, &dir.join(pipeline::CODEBOOK_FILE))?;
                    pipeline::train(&v.config, ds, &cb, &dir, false, progress)?;
                }
                trained.insert(v.train_key.clone(), ckpt.clone());
                ckpt
            }
        };
        let mdir = out.join(&v.name);
        if progress {
            eprintln!("sweep: evaluating {}", v.name);
        }
        pipeline::eval(&v.config, &ckpt, ds, &v.overrides, &mdir)?;
        metric_dirs.push(mdir);
    }
    let table = pipeline::report(&metric_dirs)?;
    pipeline::write_report(&table, out)?;
    Ok(table)
}
