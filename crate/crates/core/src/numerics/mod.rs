//! Dense row-major tensors, a tape-based reverse-mode autodiff graph and an
//! AdamW optimizer. Everything is generic over [`Real`] so the same model code
//! runs in `f32` for training and `f64` for gradient checks.

mod graph;
mod gradcheck;
pub mod kernels;
mod optim;
mod real;
mod tensor;

pub use graph::{FaultInjection, Graph, Var};
pub use gradcheck::{finite_diff_check, relative_error};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use real::Real;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// True when `UNIWM_DETERMINISTIC=1` is set. Every numeric path in this crate
/// is ordered and reproducible; the flag additionally pins worker pools to a
/// single thread so runs are independent of scheduling.
pub fn deterministic_mode() -> bool {
    std::env::var("UNIWM_DETERMINISTIC")
        .map(|v| v == "1" || v.eq_ignore_ascii_case("true"))
        .unwrap_or(false)
}
