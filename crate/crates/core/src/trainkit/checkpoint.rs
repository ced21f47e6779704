//! `ECFCKPT1` checkpoints.
//!
//! Layout: the eight bytes `ECFCKPT1`, a little-endian `u32` header length,
//! the JSON header, then the payload of little-endian `f32` values. The header
//! lists every tensor with its name, role, shape and byte offset into the
//! payload, and carries a CRC32 of the payload.

use super::adam::OptimizerState;
use crate::model::ModelConfig;
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ECFCKPT1";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to continue a training run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore<f32>,
    pub optimizer: OptimizerState<f32>,
    /// Root seed of the shuffling stream; with `step` it fixes the batch order.
    pub seed: u64,
    /// Completed optimiser steps.
    pub step: u64,
    pub epoch: u64,
    pub config_hash: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    adam: Adam,
    seed: u64,
    step: u64,
    epoch: u64,
    config_hash: String,
    payload_bytes: usize,
    payload_crc32: u32,
    tensors: Vec<Entry>,
}

fn truncated(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let opt = &self.optimizer;
        if opt.m.len() != self.params.len() || opt.v.len() != self.params.len() {
            return Err(Error::ConfigMismatch("optimizer moments do not mirror the parameters".into()));
        }
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: &str, role: Role, shape: &[usize], values: &[f32]| {
            tensors.push(Entry { name: name.to_string(), role, shape: shape.to_vec(), offset: payload.len() });
            values.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
        };
        for (i, (name, t)) in self.params.iter().enumerate() {
            push(name, Role::Param, t.shape(), t.data());
            push(name, Role::AdamM, t.shape(), &opt.m[i]);
            push(name, Role::AdamV, t.shape(), &opt.v[i]);
        }
        let header = Header {
            version: FORMAT_VERSION,
            model: self.model.clone(),
            adam: Adam { lr: opt.lr, beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps, t: opt.t },
            seed: self.seed,
            step: self.step,
            epoch: self.epoch,
            config_hash: self.config_hash.clone(),
            payload_bytes: payload.len(),
            payload_crc32: crc32fast::hash(&payload),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::format("checkpoint", "missing ECFCKPT1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes")) as usize;
        let json = bytes.get(12..12 + hlen).ok_or_else(|| truncated("header is cut short"))?;
        let header: Header = serde_json::from_slice(json)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::ConfigMismatch(format!("checkpoint format version {} is not {FORMAT_VERSION}", header.version)));
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != header.payload_bytes {
            return Err(truncated(format!("payload holds {} bytes, header promises {}", payload.len(), header.payload_bytes)));
        }
        if crc32fast::hash(payload) != header.payload_crc32 {
            return Err(Error::format("checkpoint", "payload checksum mismatch"));
        }
        let read = |e: &Entry| -> Result<Tensor<f32>> {
            let n: usize = e.shape.iter().product();
            let end = n.checked_mul(4).and_then(|b| b.checked_add(e.offset)).ok_or_else(|| truncated("tensor size overflows"))?;
            let raw = payload.get(e.offset..end).ok_or_else(|| truncated(format!("tensor `{}` runs past the payload", e.name)))?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
            Tensor::new(&e.shape, values)
        };
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for e in &header.tensors {
            let t = read(e)?;
            match e.role {
                Role::Param => {
                    params.add(e.name.clone(), t)?;
                }
                Role::AdamM => m.push(t.into_data()),
                Role::AdamV => v.push(t.into_data()),
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::format("checkpoint", "optimizer moments do not mirror the parameters"));
        }
        let a = header.adam;
        Ok(Checkpoint {
            model: header.model,
            params,
            optimizer: OptimizerState { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, t: a.t, m, v },
            seed: header.seed,
            step: header.step,
            epoch: header.epoch,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Loads a checkpoint and checks that it was written for `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.model != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint model {} differs from configured {}",
                serde_json::to_string(&ckpt.model)?,
                serde_json::to_string(expected)?
            )));
        }
        Ok(ckpt)
    }
}
