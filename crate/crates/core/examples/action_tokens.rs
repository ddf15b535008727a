//! Encodes continuous actions into bin tokens and back, and prints the
//! token names the model actually sees.
//!
//! cargo run --example action_tokens

use std::error::Error;

use uniwm::tokenizers::{decode_action, encode_action, VocabLayout};
use uniwm::worldsim::Action;

pub fn run_example() -> Result<f64, Box<dyn Error>> {
    let layout = VocabLayout::new(64, 256);
    println!("vocabulary: {} ids", layout.vocab_size());
    let mut worst = 0.0f64;
    for a in [
        Action::Move { dx: 0.734, dy: -0.021, dyaw: 0.3 },
        Action::Move { dx: 0.0, dy: -0.0, dyaw: -0.989 },
        Action::Stop,
    ] {
        let toks = encode_action(&layout, &a)?;
        let back = decode_action(&layout, &toks)?;
        let names: Vec<String> = toks.iter().map(|&t| layout.token_name(t)).collect();
        println!("{a:?}\n  -> {names:?}\n  -> {back:?}");
        if let (Some(x), Some(y)) = (a.components(), back.components()) {
            worst = worst.max((x.0 - y.0).abs()).max((x.1 - y.1).abs()).max((x.2 - y.2).abs());
        }
    }
    println!("largest component error {worst:.4}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
