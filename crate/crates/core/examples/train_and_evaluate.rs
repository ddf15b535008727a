//! The whole loop at toy scale: generate a small dataset, fit the codebook,
//! train a two-layer model, evaluate it with memory off, intra-step only and
//! full, then print the comparison table.
//!
//! cargo run --release --example train_and_evaluate

use std::error::Error;

use uniwm::config::RunConfig;
use uniwm::eval::ReportTable;
use uniwm::pipeline::{self, EvalOverrides};
use uniwm::rollout::MemoryMode;

pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.world.n_train = 24;
    c.world.n_eval = 4;
    c.tokenizer.codebook_size = 32;
    c.tokenizer.kmeans_iters = 5;
    c.tokenizer.max_patches = 4000;
    c.model.n_layers = 2;
    c.model.d_model = 32;
    c.model.n_heads = 2;
    c.model.save_layer_count = 2;
    c.train.lr = 3e-3;
    c.train.epochs = 1;
    c.rollout.max_steps = 8;
    c
}

pub fn run_example() -> Result<ReportTable, Box<dyn Error>> {
    let root = std::env::temp_dir().join("uniwm_train_and_evaluate");
    let _ = std::fs::remove_dir_all(&root);
    let cfg = tiny_config();
    pipeline::gen_data(&cfg, &root.join("data"), false)?;
    let ds = pipeline::load_dataset(&root.join("data"))?;
    let run = root.join("run");
    let cb = pipeline::codebook_for(&cfg, &ds, &run.join(pipeline::CODEBOOK_FILE))?;
    let out = pipeline::train(&cfg, &ds, &cb, &run, false, false)?;
    for e in &out.epochs {
        println!("epoch {}: plan loss {:.3?}  world loss {:.3?}", e.epoch, e.mean_plan, e.mean_world);
    }
    let mut dirs = Vec::new();
    for mode in [MemoryMode::Off, MemoryMode::Intra, MemoryMode::Full] {
        let dir = root.join(format!("eval_{}", mode.name()));
        pipeline::eval(&cfg, &out.checkpoint, &ds, &EvalOverrides { memory: Some(mode), ..Default::default() }, &dir)?;
        dirs.push(dir);
    }
    let table = pipeline::report(&dirs)?;
    print!("{}", table.to_text());
    Ok(table)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
