use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

use super::config::{Model, TrainConfig};

pub const MAGIC: &[u8; 5] = b"MSPC1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to regenerate the random streams of the remaining
/// steps: all of them are derived from the seed and the global step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

/// Plain gradient descent keeps no per-parameter state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: String,
    pub lr: f64,
    pub clip: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: u8,
    pub step: u64,
    pub config: TrainConfig,
    pub rng: RngState,
    pub optimizer: OptimizerState,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    /// Byte offset into the data section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    stage: u8,
    step: u64,
    config: TrainConfig,
    rng: RngState,
    optimizer: OptimizerState,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Snapshot of `model` after `step` global steps under `config`.
    pub fn capture(model: &Model, config: &TrainConfig, step: u64) -> Self {
        let tensors = model
            .store
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                trainable: p.requires_grad,
                value: p.value.clone(),
            })
            .collect();
        Self {
            version: FORMAT_VERSION,
            stage: config.stage,
            step,
            config: config.clone(),
            rng: RngState { seed: config.seed, step },
            optimizer: OptimizerState {
                kind: "sgd".into(),
                lr: config.lr,
                clip: config.clip,
            },
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.value.shape().to_vec(),
                    trainable: t.trainable,
                    offset,
                };
                offset += 8 * t.value.numel() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            version: self.version,
            stage: self.stage,
            step: self.step,
            config: self.config.clone(),
            rng: self.rng,
            optimizer: self.optimizer.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(13 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != MAGIC {
            return Err(Error::Checkpoint("missing MSPC1 header".into()));
        }
        let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
        let data_start = 13usize
            .checked_add(len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("manifest of {len} bytes runs past the end of the file")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[13..data_start])
            .map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.version
            )));
        }
        let data = &bytes[data_start..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' at offset {}, expected {expected}",
                    e.name, e.offset
                )));
            }
            let numel: usize = e.shape.iter().product();
            let end = e.offset + 8 * numel as u64;
            if end > data.len() as u64 {
                return Err(Error::Checkpoint(format!(
                    "truncated file: tensor '{}' needs data bytes {}..{end}, only {} present",
                    e.name,
                    e.offset,
                    data.len()
                )));
            }
            let values = data[e.offset as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor {
                value: Tensor::new(e.shape, values)?,
                name: e.name,
                trainable: e.trainable,
            });
            expected = end;
        }
        if expected != data.len() as u64 {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                data.len() as u64 - expected
            )));
        }
        Ok(Self {
            version: manifest.version,
            stage: manifest.stage,
            step: manifest.step,
            config: manifest.config,
            rng: manifest.rng,
            optimizer: manifest.optimizer,
            tensors,
        })
    }

    /// Copies the checkpoint tensors into `store`.
    ///
    /// Every checkpoint tensor must exist in the store with the same shape.
    /// Store tensors absent from the checkpoint are an error unless their
    /// name starts with one of `fresh_prefixes`. Nothing is written unless
    /// all checks pass.
    pub fn load_into(&self, store: &mut ParamStore, fresh_prefixes: &[&str]) -> Result<()> {
        let mut writes = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let id = store
                .find(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint tensor '{}' has no counterpart in the model", t.name)))?;
            let have = store.value(id).shape();
            if have != t.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}': checkpoint shape {:?} vs model shape {:?}",
                    t.name,
                    t.value.shape(),
                    have
                )));
            }
            writes.push((id, &t.value));
        }
        for (_, p) in store.iter() {
            let fresh = fresh_prefixes.iter().any(|pre| p.name.starts_with(pre));
            if !fresh && self.tensor(&p.name).is_none() {
                return Err(Error::Checkpoint(format!("model tensor '{}' is missing from the checkpoint", p.name)));
            }
        }
        for (id, v) in writes {
            *store.value_mut(id) = v.clone();
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Rebuilds the model a checkpoint was taken from.
pub fn restore_model(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(&ckpt.config)?;
    ckpt.load_into(&mut model.store, &[])?;
    Ok(model)
}
