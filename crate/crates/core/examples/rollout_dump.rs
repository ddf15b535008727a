//! Trains a toy model, rolls out one evaluation trajectory with full memory
//! and writes the dump: actions, poses, imagined and true frames, and the
//! per-step memory trace.
//!
//! cargo run --release --example rollout_dump

use std::error::Error;
use std::path::PathBuf;

use uniwm::config::RunConfig;
use uniwm::pipeline::{self, EvalOverrides};
use uniwm::rollout::MemTrace;

pub fn run_example() -> Result<(PathBuf, MemTrace), Box<dyn Error>> {
    let root = std::env::temp_dir().join("uniwm_rollout_dump");
    let _ = std::fs::remove_dir_all(&root);
    let mut cfg = RunConfig::default();
    cfg.world.n_train = 12;
    cfg.world.n_eval = 2;
    cfg.tokenizer.codebook_size = 16;
    cfg.tokenizer.kmeans_iters = 4;
    cfg.tokenizer.max_patches = 2000;
    cfg.model.n_layers = 2;
    cfg.model.d_model = 32;
    cfg.model.n_heads = 2;
    cfg.model.save_layer_count = 2;
    cfg.train.epochs = 2;
    cfg.train.lr = 3e-3;
    cfg.rollout.max_steps = 6;
    pipeline::gen_data(&cfg, &root.join("data"), false)?;
    let ds = pipeline::load_dataset(&root.join("data"))?;
    let cb = pipeline::codebook_for(&cfg, &ds, &root.join("run").join(pipeline::CODEBOOK_FILE))?;
    let ck = pipeline::train(&cfg, &ds, &cb, &root.join("run"), false, false)?.checkpoint;
    let id = ds.eval[0].id;
    let dir = pipeline::rollout_dump(&cfg, &ck, &ds, id, &EvalOverrides::default(), &root.join("dump"), true, true)?;
    let trace: MemTrace = serde_json::from_slice(&std::fs::read(dir.join("memtrace.json"))?)?;
    for s in &trace.steps {
        let names: Vec<String> = s.events.iter().map(|e| format!("{e:?}")).collect();
        println!("t={}: {}", s.t, names.join(" -> "));
    }
    println!("cross-step store size {} ({})", trace.cross_size, dir.display());
    Ok((dir, trace))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
