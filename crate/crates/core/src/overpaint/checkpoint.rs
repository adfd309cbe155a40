//! Checkpoint container.
//!
//! Layout: 8-byte magic `VKCKPT\0\0`, little-endian `u32` format version,
//! little-endian `u64` header length, a JSON header (config, step, loss
//! history, tensor table), then every parameter as a little-endian `f64` in
//! tensor-table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, TensorSpec};
use super::train::ProgressRecord;
use super::{OverpaintError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VKCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: usize,
    pub history: Vec<ProgressRecord>,
    pub tensors: Vec<TensorSpec>,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: usize,
    history: Vec<ProgressRecord>,
    tensors: Vec<TensorSpec>,
}

fn bad(why: impl Into<String>) -> OverpaintError {
    OverpaintError::BadCheckpoint(why.into())
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: usize, history: Vec<ProgressRecord>) -> Checkpoint {
        Checkpoint {
            config: *model.config(),
            step,
            history,
            tensors: model.specs().to_vec(),
            params: model.params().to_vec(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        let model = Model::from_params(self.config, self.params.clone())?;
        if model.specs() != self.tensors.as_slice() {
            return Err(bad("tensor table does not match the configuration"));
        }
        Ok(model)
    }

    /// Values of the named tensor.
    pub fn tensor(&self, name: &str) -> Option<(&TensorSpec, &[f64])> {
        let spec = self.tensors.iter().find(|s| s.name == name)?;
        Some((spec, &self.params[spec.offset..spec.offset + spec.len()]))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config,
            step: self.step,
            history: self.history.clone(),
            tensors: self.tensors.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("header: {e}")))?;
        let data = &body[header_len..];
        let expected: usize = header.tensors.iter().map(TensorSpec::len).sum();
        if data.len() != 8 * expected {
            return Err(bad(format!("expected {} parameter bytes, found {}", 8 * expected, data.len())));
        }
        let params = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let ckpt = Checkpoint { config: header.config, step: header.step, history: header.history, tensors: header.tensors, params };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let io = |source| OverpaintError::Io { path: path.to_path_buf(), source };
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|source| OverpaintError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}
