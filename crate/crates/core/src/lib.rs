pub mod numerics;
pub mod worldsim;
pub mod tokenizers;
pub mod model;
pub mod membank;
pub mod training;
pub mod rollout;
pub mod eval;
pub mod config;
pub mod pipeline;
pub mod sweep;
