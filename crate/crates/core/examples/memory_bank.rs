//! Drives the two-level memory by hand: each step deposits a synthetic
//! K/V capture, merges it with gated, decayed history and appends it to the
//! cross-step store.
//!
//! cargo run --example memory_bank

use std::error::Error;

use uniwm::membank::{kv_from_fn, Memory, MemoryBank, MemoryConfig, MergeMode};

pub fn run_example() -> Result<usize, Box<dyn Error>> {
    let layers = [0, 3];
    let (rows, width) = (4, 8);
    let mut bank = MemoryBank::new(MemoryConfig { top_k: 2, gamma: 0.2, capacity: None }, &layers, rows);
    for t in 1..=6 {
        bank.reset_intra();
        // every other step looks alike, so gating should prefer those
        let phase = (t % 2) as f32;
        bank.deposit(kv_from_fn(&layers, rows, width, |l, i| ((i + l) as f32 * 0.37 + phase * 2.0).sin() + 0.1 * t as f32), t)?;
        let (fused, trace) = bank.merge(MergeMode::IntraPlusCross)?;
        let sel = &trace.layers[0];
        let picked: Vec<usize> = sel.selected.iter().map(|&i| trace.history[i]).collect();
        println!(
            "t={t}: history {:?}  layer 0 picks steps {picked:?} with weights {:.4?}  fused rows {}",
            trace.history,
            trace.alphas[0],
            fused.rows().unwrap_or(0)
        );
        bank.append_cross()?;
    }
    println!("cross-step store holds {} entries", bank.cross_len());
    Ok(bank.cross_len())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
