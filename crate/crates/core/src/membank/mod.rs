//! Hierarchical K/V memory: a per-step intra cache of the current
//! observation span, a timestamped cross-step store, cosine top-k gating,
//! exponential recency weighting and fusion into attention memory.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{KvBlock, LayerKV};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("captured span has {got} rows, expected {want}")]
    SpanMismatch { got: usize, want: usize },
    #[error("captured layers {got:?} differ from memory layers {want:?}")]
    LayerMismatch { got: Vec<usize>, want: Vec<usize> },
    #[error("intra-step slot already holds step {0}; reset first")]
    SlotOccupied(usize),
    #[error("intra-step slot is empty")]
    SlotEmpty,
    #[error("timestamp {new} does not follow {last}")]
    NonMonotonic { new: usize, last: usize },
    #[error("selected timestamp {tm} is not before current step {t}")]
    FutureEntry { tm: usize, t: usize },
    #[error("top-k requires k >= 1")]
    ZeroK,
    #[error("selection and weights are misaligned")]
    Misaligned,
}

/// K/V of the current observation span at every memory layer.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraStepMemory {
    pub step: usize,
    pub kv: LayerKV<f32>,
}

/// Append-only timestamped store with optional FIFO capacity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossStepMemory {
    entries: VecDeque<IntraStepMemory>,
    capacity: Option<usize>,
}

impl CrossStepMemory {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&IntraStepMemory> {
        self.entries.get(i)
    }

    pub fn timestamps(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.step).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &IntraStepMemory> {
        self.entries.iter()
    }
}

pub fn append_cross(cross: &mut CrossStepMemory, intra: IntraStepMemory) -> Result<(), MemoryError> {
    if let Some(last) = cross.entries.back() {
        if intra.step <= last.step {
            return Err(MemoryError::NonMonotonic {
                new: intra.step,
                last: last.step,
            });
        }
    }
    cross.entries.push_back(intra);
    if let Some(cap) = cross.capacity {
        while cross.entries.len() > cap {
            cross.entries.pop_front();
        }
    }
    Ok(())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Indices of the `k` largest scores; ties go to the later index. Result is
/// ascending.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Gating outcome for one memory layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct LayerSelection {
    pub layer: usize,
    /// Cosine similarity to every history entry, in store order.
    pub similarities: Vec<f64>,
    /// Selected store indices, ascending (so ascending in timestamp).
    pub selected: Vec<usize>,
}

/// Per layer: cosine similarity between flattened current keys and each
/// history entry's keys, then top-k.
pub fn similarity_gate(
    intra: &IntraStepMemory,
    cross: &CrossStepMemory,
    k: usize,
) -> Result<Vec<LayerSelection>, MemoryError> {
    if k == 0 {
        return Err(MemoryError::ZeroK);
    }
    intra
        .kv
        .layers
        .iter()
        .zip(&intra.kv.blocks)
        .map(|(&layer, cur)| {
            let similarities = cross
                .iter()
                .map(|e| {
                    let h = e.kv.block(layer).ok_or(MemoryError::LayerMismatch {
                        got: e.kv.layers.clone(),
                        want: intra.kv.layers.clone(),
                    })?;
                    Ok(cosine(&cur.k, &h.k))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let selected = top_k(&similarities, k);
            Ok(LayerSelection {
                layer,
                similarities,
                selected,
            })
        })
        .collect()
}

/// Softmax of `-γ (t - t_m)` over the selected timestamps.
pub fn decay_weights(selected: &[usize], t: usize, gamma: f64) -> Result<Vec<f64>, MemoryError> {
    if let Some(&tm) = selected.iter().find(|&&tm| tm >= t) {
        return Err(MemoryError::FutureEntry { tm, t });
    }
    let raw: Vec<f64> = selected.iter().map(|&tm| (-gamma * (t - tm) as f64).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / z).collect())
}

/// Concatenates current K/V with α-scaled selected history, history in
/// ascending timestamp order. Both keys and values are scaled.
pub fn fuse(
    intra: &IntraStepMemory,
    cross: &CrossStepMemory,
    selection: &[LayerSelection],
    alphas: &[Vec<f64>],
) -> Result<LayerKV<f32>, MemoryError> {
    if selection.len() != intra.kv.layers.len() || alphas.len() != selection.len() {
        return Err(MemoryError::Misaligned);
    }
    let mut blocks = Vec::with_capacity(selection.len());
    for ((sel, a), cur) in selection.iter().zip(alphas).zip(&intra.kv.blocks) {
        if sel.selected.len() != a.len() {
            return Err(MemoryError::Misaligned);
        }
        let mut b = cur.clone();
        for (&i, &alpha) in sel.selected.iter().zip(a) {
            let h = cross
                .get(i)
                .and_then(|e| e.kv.block(sel.layer))
                .ok_or(MemoryError::Misaligned)?;
            let w = alpha as f32;
            b.k.extend(h.k.iter().map(|&x| w * x));
            b.v.extend(h.v.iter().map(|&x| w * x));
            b.rows += h.rows;
        }
        blocks.push(b);
    }
    Ok(LayerKV {
        layers: intra.kv.layers.clone(),
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Fused memory is the current intra-step cache alone.
    IntraOnly,
    /// Gate, weight and fuse cross-step history with the intra cache.
    IntraPlusCross,
}

/// Per-step record of a merge, for debugging dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MergeTrace {
    pub step: usize,
    pub history: Vec<usize>,
    pub layers: Vec<LayerSelection>,
    /// Decay weights per layer, aligned with `layers[i].selected`.
    pub alphas: Vec<Vec<f64>>,
    pub fused_rows: usize,
}

/// Memory operations used by the rollout loop.
pub trait Memory {
    fn reset_intra(&mut self);
    fn deposit(&mut self, captured: LayerKV<f32>, t: usize) -> Result<(), MemoryError>;
    fn merge(&mut self, mode: MergeMode) -> Result<(LayerKV<f32>, MergeTrace), MemoryError>;
    fn append_cross(&mut self) -> Result<(), MemoryError>;
    fn cross_len(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub top_k: usize,
    pub gamma: f64,
    /// FIFO bound on the cross-step store; unbounded when absent.
    pub capacity: Option<usize>,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            gamma: 0.2,
            capacity: None,
        }
    }
}

/// Two-level bank for a single trajectory.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    cfg: MemoryConfig,
    layers: Vec<usize>,
    span_len: usize,
    intra: Option<IntraStepMemory>,
    cross: CrossStepMemory,
}

impl MemoryBank {
    pub fn new(cfg: MemoryConfig, layers: &[usize], span_len: usize) -> Self {
        Self {
            cfg,
            layers: layers.to_vec(),
            span_len,
            intra: None,
            cross: CrossStepMemory::new(cfg.capacity),
        }
    }

    pub fn intra(&self) -> Option<&IntraStepMemory> {
        self.intra.as_ref()
    }

    pub fn cross(&self) -> &CrossStepMemory {
        &self.cross
    }
}

impl Memory for MemoryBank {
    fn reset_intra(&mut self) {
        self.intra = None;
    }

    fn deposit(&mut self, captured: LayerKV<f32>, t: usize) -> Result<(), MemoryError> {
        if let Some(i) = &self.intra {
            return Err(MemoryError::SlotOccupied(i.step));
        }
        if captured.layers != self.layers {
            return Err(MemoryError::LayerMismatch {
                got: captured.layers,
                want: self.layers.clone(),
            });
        }
        if let Some(b) = captured.blocks.iter().find(|b| b.rows != self.span_len) {
            return Err(MemoryError::SpanMismatch {
                got: b.rows,
                want: self.span_len,
            });
        }
        self.intra = Some(IntraStepMemory { step: t, kv: captured });
        Ok(())
    }

    fn merge(&mut self, mode: MergeMode) -> Result<(LayerKV<f32>, MergeTrace), MemoryError> {
        let intra = self.intra.as_ref().ok_or(MemoryError::SlotEmpty)?;
        let history = self.cross.timestamps();
        let (layers, alphas) = match mode {
            MergeMode::IntraOnly => {
                let sel = intra
                    .kv
                    .layers
                    .iter()
                    .map(|&layer| LayerSelection {
                        layer,
                        similarities: Vec::new(),
                        selected: Vec::new(),
                    })
                    .collect::<Vec<_>>();
                let n = sel.len();
                (sel, vec![Vec::new(); n])
            }
            MergeMode::IntraPlusCross => {
                let sel = similarity_gate(intra, &self.cross, self.cfg.top_k)?;
                let alphas = sel
                    .iter()
                    .map(|s| {
                        let ts: Vec<usize> = s.selected.iter().map(|&i| history[i]).collect();
                        decay_weights(&ts, intra.step, self.cfg.gamma)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (sel, alphas)
            }
        };
        let fused = fuse(intra, &self.cross, &layers, &alphas)?;
        let trace = MergeTrace {
            step: intra.step,
            history,
            fused_rows: fused.rows().unwrap_or(0),
            layers,
            alphas,
        };
        Ok((fused, trace))
    }

    fn append_cross(&mut self) -> Result<(), MemoryError> {
        let intra = self.intra.clone().ok_or(MemoryError::SlotEmpty)?;
        append_cross(&mut self.cross, intra)
    }

    fn cross_len(&self) -> usize {
        self.cross.len()
    }
}

/// Stand-in with no storage; any call means a memory-free path touched
/// memory.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoMemory;

impl Memory for NoMemory {
    fn reset_intra(&mut self) {
        unreachable!("memory-free rollout reset the intra cache")
    }
    fn deposit(&mut self, _: LayerKV<f32>, _: usize) -> Result<(), MemoryError> {
        unreachable!("memory-free rollout deposited")
    }
    fn merge(&mut self, _: MergeMode) -> Result<(LayerKV<f32>, MergeTrace), MemoryError> {
        unreachable!("memory-free rollout merged")
    }
    fn append_cross(&mut self) -> Result<(), MemoryError> {
        unreachable!("memory-free rollout appended")
    }
    fn cross_len(&self) -> usize {
        0
    }
}

/// Helper for tests and examples: a block of `rows × width` with the given
/// constant or pattern.
pub fn kv_from_fn(layers: &[usize], rows: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> LayerKV<f32> {
    LayerKV {
        layers: layers.to_vec(),
        blocks: layers
            .iter()
            .map(|&l| {
                let k: Vec<f32> = (0..rows * width).map(|i| f(l, i)).collect();
                let v = k.iter().map(|x| x * 0.5 + 1.0).collect();
                KvBlock { rows, k, v }
            })
            .collect(),
    }
}
