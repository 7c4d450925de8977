//! Versioned checkpoint archive.
//!
//! ```text
//! magic    8 bytes  "FSKCKPT\0"
//! version  u32 LE
//! meta_len u64 LE
//! meta     JSON (config, hashes, epoch, counters, tensor names and shapes)
//! data     every tensor's f64 values, LE, in meta order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use facesketch_core::tensor::{Shape, Tensor};
use facesketch_core::trainer::{SketchGan, StateDict, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSKCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    config: TrainConfig,
    config_hash: String,
    parameter_hash: String,
    /// Completed epochs.
    epoch: usize,
    counters: Vec<(String, u64)>,
    tensors: Vec<TensorMeta>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub config: TrainConfig,
    pub config_hash: String,
    pub parameter_hash: String,
    pub epoch: usize,
    pub state: StateDict,
}

pub fn config_hash(config: &TrainConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl CheckpointRecord {
    pub fn capture(model: &SketchGan, epoch: usize) -> Self {
        CheckpointRecord {
            config: model.config.clone(),
            config_hash: config_hash(&model.config),
            parameter_hash: model.parameter_hash(),
            epoch,
            state: model.state_dict(),
        }
    }

    /// Rebuild the model this record describes.
    pub fn restore(&self) -> Result<SketchGan> {
        let mut model = SketchGan::new(self.config.clone())?;
        model.load_state_dict(&self.state)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            parameter_hash: self.parameter_hash.clone(),
            epoch: self.epoch,
            counters: self.state.counters.clone(),
            tensors: self
                .state
                .tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    shape: t.shape(),
                })
                .collect(),
        };
        let meta = serde_json::to_vec(&meta).expect("meta serializes");
        let mut out = Vec::with_capacity(meta.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, t) in &self.state.tensors {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint {
            path: path.to_owned(),
            message,
        };
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated header".into()))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated metadata".into()));
        }
        let meta: Meta = serde_json::from_slice(&r[..len]).map_err(|e| bad(format!("metadata: {e}")))?;
        r = &r[len..];
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for tm in meta.tensors {
            let n: usize = tm.shape.iter().product();
            if r.len() < n * 8 {
                return Err(bad(format!("truncated data for {}", tm.name)));
            }
            let data = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            r = &r[n * 8..];
            tensors.push((tm.name, Tensor::from_vec(tm.shape, data)?));
        }
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        if config_hash(&meta.config) != meta.config_hash {
            return Err(bad("config hash does not match the stored config".into()));
        }
        Ok(CheckpointRecord {
            config: meta.config,
            config_hash: meta.config_hash,
            parameter_hash: meta.parameter_hash,
            epoch: meta.epoch,
            state: StateDict {
                tensors,
                counters: meta.counters,
            },
        })
    }

    /// Write via a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
