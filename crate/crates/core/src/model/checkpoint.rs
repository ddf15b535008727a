use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::numerics::{AdamState, Tensor};
use crate::tokenizers::{Codebook, VocabLayout};

const MAGIC: &[u8; 8] = b"UNIWMCK1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CodebookHeader {
    n: usize,
    patch_h: usize,
    patch_w: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocab: VocabLayout,
    step: u64,
    epoch: usize,
    adam_step: Option<u64>,
    codebook: Option<CodebookHeader>,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Self-describing model file: magic, little-endian u64 header length, JSON
/// header, then little-endian f32 blobs listed in the header manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: VocabLayout,
    pub step: u64,
    pub epoch: usize,
    pub params: ModelParams<f32>,
    pub adam: Option<AdamState<f32>>,
    pub codebook: Option<Codebook>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut blobs: Vec<(String, Vec<usize>, &[f32])> = self
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape.clone(), t.data.as_slice()))
            .collect();
        let names: Vec<(String, Vec<usize>)> = blobs.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
        if let Some(a) = &self.adam {
            for (((n, s), m), v) in names.iter().zip(&a.m).zip(&a.v) {
                blobs.push((format!("adam.m.{n}"), s.clone(), m));
                blobs.push((format!("adam.v.{n}"), s.clone(), v));
            }
        }
        if let Some(cb) = &self.codebook {
            blobs.push(("codebook".into(), vec![cb.n, cb.dim()], &cb.entries));
        }
        let mut offset = 0u64;
        let tensors = blobs
            .iter()
            .map(|(n, s, d)| {
                let e = TensorEntry {
                    name: n.clone(),
                    shape: s.clone(),
                    offset,
                };
                offset += 4 * d.len() as u64;
                e
            })
            .collect();
        let header = Header {
            format_version: 1,
            config: self.config.clone(),
            vocab: self.vocab,
            step: self.step,
            epoch: self.epoch,
            adam_step: self.adam.as_ref().map(|a| a.step),
            codebook: self.codebook.as_ref().map(|c| CodebookHeader {
                n: c.n,
                patch_h: c.patch_h,
                patch_w: c.patch_w,
            }),
            meta: self.meta.clone(),
            tensors,
        };
        let hjson = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + hjson.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for (_, _, d) in &blobs {
            for v in d.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])?;
        if header.format_version != 1 {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let data = &bytes[hend..];
        let read = |e: &TensorEntry| -> Result<Vec<f32>, ModelError> {
            let n: usize = e.shape.iter().product();
            let a = e.offset as usize;
            let b = a + 4 * n;
            if b > data.len() {
                return Err(bad(format!("tensor {} runs past end of file", e.name)));
            }
            Ok(data[a..b].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let find = |name: &str| header.tensors.iter().find(|e| e.name == name);
        let mut params = ModelParams::<f32>::init(&header.config, 0)?;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            let e = find(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            *t = Tensor::new(e.shape.clone(), read(e)?).map_err(|er| bad(er.to_string()))?;
        }
        params.check_shapes(&header.config)?;
        let adam = match header.adam_step {
            None => None,
            Some(step) => {
                let mut m = Vec::new();
                let mut v = Vec::new();
                for name in &names {
                    let em = find(&format!("adam.m.{name}")).ok_or_else(|| bad(format!("missing adam.m.{name}")))?;
                    let ev = find(&format!("adam.v.{name}")).ok_or_else(|| bad(format!("missing adam.v.{name}")))?;
                    m.push(read(em)?);
                    v.push(read(ev)?);
                }
                Some(AdamState { step, m, v })
            }
        };
        let codebook = match &header.codebook {
            None => None,
            Some(h) => {
                let e = find("codebook").ok_or_else(|| bad("missing codebook blob".into()))?;
                Some(Codebook {
                    n: h.n,
                    patch_h: h.patch_h,
                    patch_w: h.patch_w,
                    entries: read(e)?,
                })
            }
        };
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            step: header.step,
            epoch: header.epoch,
            params,
            adam,
            codebook,
            meta: header.meta,
        })
    }

    /// Writes via a temporary file and rename so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
