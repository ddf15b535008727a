//! Runs one ablation axis (default: loss combinations) from a single toy
//! config template and prints the comparison table.
//!
//! cargo run --release --example ablation_sweep -- [tokens|layers|loss|strategy]

use std::error::Error;

use uniwm::config::RunConfig;
use uniwm::eval::ReportTable;
use uniwm::pipeline;
use uniwm::sweep::{run_sweep, SweepAxis};

pub fn template() -> RunConfig {
    let mut c = RunConfig::default();
    c.world.n_train = 10;
    c.world.n_eval = 2;
    c.tokenizer.codebook_size = 16;
    c.tokenizer.kmeans_iters = 4;
    c.tokenizer.max_patches = 2000;
    c.model.n_layers = 8;
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.train.epochs = 1;
    c.train.lr = 3e-3;
    c.train.max_steps = Some(30);
    c.rollout.max_steps = 4;
    c.eval.n_list = vec![1, 2];
    c
}

pub fn run_example(axis: SweepAxis) -> Result<ReportTable, Box<dyn Error>> {
    let root = std::env::temp_dir().join(format!("uniwm_sweep_{axis:?}").to_lowercase());
    let _ = std::fs::remove_dir_all(&root);
    let cfg = template();
    pipeline::gen_data(&cfg, &root.join("data"), false)?;
    let ds = pipeline::load_dataset(&root.join("data"))?;
    let table = run_sweep(&cfg, axis, &ds, &root.join("sweep"), false)?;
    print!("{}", table.to_text());
    Ok(table)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "loss".into());
    let axis = SweepAxis::parse(&arg).ok_or_else(|| format!("unknown axis {arg}"))?;
    run_example(axis).map(|_| ())
}
