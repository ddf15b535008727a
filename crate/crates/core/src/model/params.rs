use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Tensor<T>,
    /// `[d × 3d]`, columns are q | k | v.
    pub wqkv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

/// Decoder weights. The output head reuses `embed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Tensor<T>,
}

const LAYER_FIELDS: [&str; 6] = ["attn_norm", "wqkv", "wo", "mlp_norm", "w1", "w2"];

impl<T: Real> ModelParams<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let std = cfg.init_std;
        let out_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        let mut normal = |shape: Vec<usize>, s: f64| {
            let dist = Normal::new(0.0, s).expect("positive std");
            let n = shape.iter().product();
            let data = (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect();
            Tensor::new(shape, data).expect("shape matches data")
        };
        let embed = normal(vec![cfg.vocab_size, d], std);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                attn_norm: ones(d),
                wqkv: normal(vec![d, 3 * d], std),
                wo: normal(vec![d, d], out_std),
                mlp_norm: ones(d),
                w1: normal(vec![d, cfg.hidden_dim()], std),
                w2: normal(vec![cfg.hidden_dim(), d], out_std),
            })
            .collect();
        Ok(Self {
            embed,
            layers,
            final_norm: ones(d),
        })
    }

    /// All tensors in a fixed order, paired with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            let ts = [&l.attn_norm, &l.wqkv, &l.wo, &l.mlp_norm, &l.w1, &l.w2];
            for (f, t) in LAYER_FIELDS.iter().zip(ts) {
                out.push((format!("layers.{i}.{f}"), t));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embed];
        for l in self.layers.iter_mut() {
            out.extend([
                &mut l.attn_norm,
                &mut l.wqkv,
                &mut l.wo,
                &mut l.mlp_norm,
                &mut l.w1,
                &mut l.w2,
            ]);
        }
        out.push(&mut self.final_norm);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            embed: self.embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: l.attn_norm.cast(),
                    wqkv: l.wqkv.cast(),
                    wo: l.wo.cast(),
                    mlp_norm: l.mlp_norm.cast(),
                    w1: l.w1.cast(),
                    w2: l.w2.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
        }
    }

    /// Checks tensor shapes against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let d = cfg.d_model;
        let h = cfg.hidden_dim();
        let mut want = vec![vec![cfg.vocab_size, d]];
        for _ in 0..cfg.n_layers {
            want.extend([vec![d], vec![d, 3 * d], vec![d, d], vec![d], vec![d, h], vec![h, d]]);
        }
        want.push(vec![d]);
        let named = self.named();
        if named.len() != want.len() {
            return Err(ModelError::Config(format!(
                "{} tensors, config implies {}",
                named.len(),
                want.len()
            )));
        }
        for ((name, t), w) in named.iter().zip(&want) {
            if &t.shape != w {
                return Err(ModelError::Config(format!("{name} has shape {:?}, expected {w:?}", t.shape)));
            }
        }
        Ok(())
    }
}

fn ones<T: Real>(d: usize) -> Tensor<T> {
    Tensor::new(vec![d], vec![T::one(); d]).expect("vector shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 1061,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_init() {
        let a = ModelParams::<f32>::init(&cfg(), 1).unwrap();
        let b = ModelParams::<f32>::init(&cfg(), 1).unwrap();
        let c = ModelParams::<f32>::init(&cfg(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check_shapes(&cfg()).unwrap();
    }

    #[test]
    fn embedding_std_in_band() {
        let p = ModelParams::<f64>::init(&cfg(), 5).unwrap();
        let e = &p.embed.data;
        assert!(e.len() >= 100_000);
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len() as f64;
        let sd = var.sqrt();
        assert!((0.015..=0.025).contains(&sd), "std {sd}");
    }

    #[test]
    fn output_projections_scaled() {
        let p = ModelParams::<f64>::init(&cfg(), 5).unwrap();
        let w = &p.layers[0].w2.data;
        let sd = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!((sd - 0.005).abs() < 0.0005, "std {sd}");
    }
}
