//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AFH1"                     4-byte magic
//! header_len: u64            byte length of the JSON header
//! header: JSON               dtype, both network configs, optimizer step
//!                            counters, free-form metadata, tensor manifest
//! payload                    raw tensors, each at its manifest offset
//! ```
//!
//! Each manifest entry records `name`, `dtype`, `shape` and `offset` (bytes
//! from the start of the payload). Parameter tensors use their own names;
//! ADAM moments are stored as `adam.m.<name>` / `adam.v.<name>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{EnhancerConfig, PolicyConfig};
use super::params::{NamedTensor, ParamSet, TensorSet};
use crate::autodiff::{DType, Scalar, Tensor};
use crate::error::{AfhError, Result};
use crate::training::{AdamMoments, AdamState};

pub const MAGIC: &[u8; 4] = b"AFH1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: DType,
    policy_config: PolicyConfig,
    enhancer_config: EnhancerConfig,
    optimizer: Option<OptimizerSteps>,
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct OptimizerSteps {
    policy: u64,
    enhancer: u64,
}

/// Everything a checkpoint file holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamSet<T>,
    pub optimizer: Option<AdamState<T>>,
    pub meta: serde_json::Value,
}

fn ckpt_err(msg: impl Into<String>) -> AfhError {
    AfhError::Checkpoint(msg.into())
}

pub fn encode_checkpoint<T: Scalar>(
    params: &ParamSet<T>,
    optimizer: Option<&AdamState<T>>,
    meta: &serde_json::Value,
) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, &Tensor<T>)> = params
        .iter()
        .map(|e| (e.name.clone(), &e.tensor))
        .collect();
    if let Some(opt) = optimizer {
        for (moments, set) in [(&opt.policy, &params.policy), (&opt.enhancer, &params.enhancer)] {
            moments.m.check_layout(set)?;
            moments.v.check_layout(set)?;
            for e in moments.m.entries() {
                tensors.push((format!("adam.m.{}", e.name), &e.tensor));
            }
            for e in moments.v.entries() {
                tensors.push((format!("adam.v.{}", e.name), &e.tensor));
            }
        }
    }
    let mut payload = Vec::new();
    let mut manifest = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        manifest.push(ManifestEntry {
            name,
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let header = Header {
        dtype: T::DTYPE,
        policy_config: params.policy_config.clone(),
        enhancer_config: params.enhancer_config.clone(),
        optimizer: optimizer.map(|o| OptimizerSteps {
            policy: o.policy.step,
            enhancer: o.enhancer.step,
        }),
        meta: meta.clone(),
        tensors: manifest,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(ckpt_err("missing AFH1 magic"));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let body = &bytes[12..];
    if header_len > body.len() {
        return Err(ckpt_err("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| ckpt_err(format!("corrupt header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(ckpt_err(format!(
            "checkpoint holds {:?} tensors, requested {:?}",
            header.dtype,
            T::DTYPE
        )));
    }
    let payload = &body[header_len..];
    let size = T::DTYPE.size();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0u64;
    for entry in &header.tensors {
        if entry.dtype != T::DTYPE {
            return Err(ckpt_err(format!("tensor `{}` has mixed dtype", entry.name)));
        }
        if entry.offset != expected_offset {
            return Err(ckpt_err(format!("tensor `{}` at unexpected offset", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * size;
        if end > payload.len() {
            return Err(ckpt_err(format!("tensor `{}` truncated", entry.name)));
        }
        let data = payload[start..end].chunks_exact(size).map(T::read_le).collect();
        tensors.push(NamedTensor {
            name: entry.name.clone(),
            tensor: Tensor::from_vec(&entry.shape, data),
        });
        expected_offset = end as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(ckpt_err("trailing bytes after payload"));
    }

    let layout = ParamSet::<T>::zeros(&header.policy_config, &header.enhancer_config)?;
    let mut it = tensors.into_iter();
    let mut take_set = |like: &TensorSet<T>, prefix: &str| -> Result<TensorSet<T>> {
        let mut entries = Vec::with_capacity(like.len());
        for reference in like.entries() {
            let mut t = it
                .next()
                .ok_or_else(|| ckpt_err(format!("missing tensor {prefix}{}", reference.name)))?;
            let want = format!("{prefix}{}", reference.name);
            if t.name != want {
                return Err(ckpt_err(format!("expected `{want}`, found `{}`", t.name)));
            }
            t.name = reference.name.clone();
            entries.push(t);
        }
        let set = TensorSet::new(entries);
        set.check_layout(like)?;
        Ok(set)
    };
    let policy = take_set(&layout.policy, "")?;
    let enhancer = take_set(&layout.enhancer, "")?;
    let optimizer = match header.optimizer {
        Some(steps) => {
            let pm = take_set(&layout.policy, "adam.m.")?;
            let pv = take_set(&layout.policy, "adam.v.")?;
            let em = take_set(&layout.enhancer, "adam.m.")?;
            let ev = take_set(&layout.enhancer, "adam.v.")?;
            Some(AdamState {
                policy: AdamMoments {
                    step: steps.policy,
                    m: pm,
                    v: pv,
                },
                enhancer: AdamMoments {
                    step: steps.enhancer,
                    m: em,
                    v: ev,
                },
            })
        }
        None => None,
    };
    if it.next().is_some() {
        return Err(ckpt_err("unexpected extra tensors"));
    }
    let params = ParamSet {
        policy_config: header.policy_config,
        enhancer_config: header.enhancer_config,
        policy,
        enhancer,
    };
    if !params.is_finite() {
        return Err(ckpt_err("non-finite parameter values"));
    }
    Ok(Checkpoint {
        params,
        optimizer,
        meta: header.meta,
    })
}

pub fn save_checkpoint<T: Scalar>(
    params: &ParamSet<T>,
    optimizer: Option<&AdamState<T>>,
    meta: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_checkpoint(params, optimizer, meta)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| ckpt_err(format!("cannot read {}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and requires its networks to match the given configs.
pub fn load_checkpoint_for<T: Scalar>(
    path: impl AsRef<Path>,
    policy: &PolicyConfig,
    enhancer: &EnhancerConfig,
) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint::<T>(path)?;
    let want = ParamSet::<T>::zeros(policy, enhancer)?;
    ck.params.policy.check_layout(&want.policy)?;
    ck.params.enhancer.check_layout(&want.enhancer)?;
    if &ck.params.policy_config != policy || &ck.params.enhancer_config != enhancer {
        return Err(ckpt_err("checkpoint configs differ from the requested model"));
    }
    Ok(ck)
}
