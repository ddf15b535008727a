//! Samples from an untrained model under the structural token masks: even
//! random weights always produce a parseable action and a full frame.
//!
//! cargo run --example constrained_decoding

use std::error::Error;

use uniwm::model::{decode_constrained, ModelConfig, ModelParams, SamplingConfig};
use uniwm::tokenizers::{decode_action, Role, Special, VocabLayout};

pub fn run_example() -> Result<usize, Box<dyn Error>> {
    let layout = VocabLayout::new(64, 32);
    let cfg = ModelConfig { n_layers: 2, d_model: 32, n_heads: 2, vocab_size: layout.vocab_size(), save_layer_count: 2, ..Default::default() };
    let params = ModelParams::<f32>::init(&cfg, 5)?;
    let prompt = [Special::Bos.id(), Special::ActMark.id()];
    let mut parsed = 0;
    for seed in 0..8 {
        let sampling = SamplingConfig { temperature: 1.0, seed };
        let toks = decode_constrained(&params, &cfg, &layout, &prompt, Role::Both, None, 16, &sampling)?;
        // generation ends right after STOP
        let split = if toks[0] == Special::Stop.id() { 1 } else { 3 };
        let action = decode_action(&layout, &toks[..split])?;
        let frame = toks[split..].iter().filter(|&&t| layout.image_code(t).is_ok()).count();
        println!("seed {seed}: {action:?}, {frame} image tokens");
        parsed += 1;
    }
    Ok(parsed)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
