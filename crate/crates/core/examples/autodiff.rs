//! Builds a small computation on the autodiff tape, runs backward and
//! checks the analytic gradient against central differences in f64.
//!
//! cargo run --example autodiff

use std::error::Error;

use uniwm::numerics::{finite_diff_check, Graph, Tensor};

fn objective(w: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>), Box<dyn Error>> {
    let mut g = Graph::<f64>::new();
    let x = g.constant(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?;
    let w = g.leaf(Tensor::new(vec![3, 4], w.to_vec())?.with_grad());
    let gain = g.constant(vec![4], vec![1.0, 0.5, 2.0, 1.0])?;
    let h = g.matmul(x, w)?;
    let h = g.rmsnorm(h, gain)?;
    let p = g.log_softmax(h);
    let picked = g.gather(p, &[1, 6])?;
    let s = g.sum(picked);
    let loss = g.scale(s, -0.5);
    let value = g.value(loss).data[0];
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    Ok((value, g.grad(w).unwrap().to_vec()))
}

pub fn run_example() -> Result<f64, Box<dyn Error>> {
    let w: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    let (loss, grad) = objective(&w, true)?;
    let worst = finite_diff_check(|p| objective(p, false).unwrap().0, &w, &grad, 1e-6, 12, 0);
    println!("loss {loss:.6}");
    println!("gradient {grad:.4?}");
    println!("worst relative error against finite differences {worst:.2e}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
