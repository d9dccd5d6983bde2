//! Checkpoint files.
//!
//! Layout (little-endian):
//! - magic `b"AECK"`, version u8 = 1
//! - header length: u64, then a JSON header of that many bytes
//! - one f64 AENC tensor record per parameter block, in header order

use std::io::Read;
use std::path::Path;

use aenc_core::ceilings::{CrossCheckpoint, CrossConfig, CrossParams};
use aenc_core::params::ParamBlocks;
use aenc_core::trainer::{Checkpoint, EncoderCheckpoint};
use aenc_core::{EncoderConfig, EncoderParams, SplitSpec, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AencError, Result};
use crate::files::write_atomic;
use crate::tensor_file::{self, DType};

pub const MAGIC: &[u8; 4] = b"AECK";
pub const VERSION: u8 = 1;

/// Where the training data came from and how it was normalized.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataRef {
    pub manifest: Option<String>,
    pub split: Option<SplitSpec>,
    /// Split whose train movies supplied z-score statistics; `None` = raw.
    pub normalization: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header<C> {
    pub kind: String,
    pub model: C,
    pub train: Option<TrainConfig>,
    pub data: DataRef,
    pub best_score: Option<f64>,
    pub best_step: usize,
    pub tensors: Vec<String>,
}

pub fn encode<C: Serialize, P: ParamBlocks>(header: &Header<C>, params: &P) -> Vec<u8> {
    let blocks = params.blocks();
    let header = Header {
        tensors: blocks.iter().map(|b| b.name.clone()).collect(),
        ..header_ref(header)
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.push(VERSION);
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(json);
    for b in &blocks {
        tensor_file::write_to(&mut out, DType::F64, &b.shape, b.values).expect("writing to memory");
    }
    out
}

fn header_ref<C: Serialize>(h: &Header<C>) -> Header<&C> {
    Header {
        kind: h.kind.clone(),
        model: &h.model,
        train: h.train.clone(),
        data: h.data.clone(),
        best_score: h.best_score,
        best_step: h.best_step,
        tensors: h.tensors.clone(),
    }
}

pub fn write<C: Serialize, P: ParamBlocks>(
    path: &Path,
    header: &Header<C>,
    params: &P,
) -> Result<()> {
    write_atomic(path, &encode(header, params))
}

/// Reads a checkpoint of `kind`, building the parameter container with
/// `zeros` and filling every block by name.
pub fn read<C: DeserializeOwned, P: ParamBlocks>(
    path: &Path,
    kind: &str,
    zeros: impl FnOnce(&C) -> P,
) -> Result<(Header<C>, P)> {
    let bytes = std::fs::read(path).map_err(AencError::io(path))?;
    let bad = |reason: String| AencError::format(path, reason);
    let mut r = bytes.as_slice();
    let mut head = [0u8; 13];
    r.read_exact(&mut head)
        .map_err(|_| bad("truncated checkpoint header".into()))?;
    if &head[..4] != MAGIC || head[4] != VERSION {
        return Err(bad("not a version-1 checkpoint".into()));
    }
    let len = u64::from_le_bytes(head[5..13].try_into().unwrap()) as usize;
    if r.len() < len {
        return Err(bad("truncated checkpoint header".into()));
    }
    let header: Header<C> =
        serde_json::from_slice(&r[..len]).map_err(|e| bad(format!("bad header: {e}")))?;
    r = &r[len..];
    if header.kind != kind {
        return Err(bad(format!(
            "expected a `{kind}` checkpoint, found `{}`",
            header.kind
        )));
    }
    let mut params = zeros(&header.model);
    let expected: Vec<(String, Vec<usize>)> = params
        .blocks()
        .iter()
        .map(|b| (b.name.clone(), b.shape.clone()))
        .collect();
    if header.tensors != expected.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>() {
        return Err(bad(
            "tensor list does not match the model configuration".into()
        ));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let t = tensor_file::read_from(&mut r).map_err(|e| bad(format!("tensor `{name}`: {e}")))?;
        if &t.shape != shape {
            return Err(bad(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        tensors.push(t.data);
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    let mut it = tensors.into_iter();
    params.fill_from(|_, _| Ok(it.next().expect("one tensor per block")))?;
    Ok((header, params))
}

pub fn save_encoder(path: &Path, ckpt: &EncoderCheckpoint, data: &DataRef) -> Result<()> {
    let header = Header {
        kind: "encoder".into(),
        model: ckpt.model.clone(),
        train: Some(ckpt.train.clone()),
        data: data.clone(),
        best_score: ckpt.best_score,
        best_step: ckpt.best_step,
        tensors: Vec::new(),
    };
    write(path, &header, &ckpt.params)
}

pub fn load_encoder(path: &Path) -> Result<(EncoderCheckpoint, DataRef)> {
    let (h, params) = read::<EncoderConfig, EncoderParams>(path, "encoder", EncoderParams::zeros)?;
    let train = h
        .train
        .ok_or_else(|| AencError::format(path, "encoder checkpoint without train config"))?;
    Ok((
        Checkpoint {
            model: h.model,
            train,
            params,
            best_score: h.best_score,
            best_step: h.best_step,
        },
        h.data,
    ))
}

pub fn save_cross(path: &Path, ckpt: &CrossCheckpoint, data: &DataRef) -> Result<()> {
    let header = Header {
        kind: "cross".into(),
        model: ckpt.model.clone(),
        train: Some(ckpt.train.clone()),
        data: data.clone(),
        best_score: ckpt.best_score,
        best_step: ckpt.best_step,
        tensors: Vec::new(),
    };
    write(path, &header, &ckpt.params)
}

pub fn load_cross(path: &Path) -> Result<(CrossCheckpoint, DataRef)> {
    let (h, params) = read::<CrossConfig, CrossParams>(path, "cross", CrossParams::zeros)?;
    let train = h
        .train
        .ok_or_else(|| AencError::format(path, "cross checkpoint without train config"))?;
    Ok((
        Checkpoint {
            model: h.model,
            train,
            params,
            best_score: h.best_score,
            best_step: h.best_step,
        },
        h.data,
    ))
}

/// Planted parameters of a synthetic dataset.
pub fn save_planted(path: &Path, config: &EncoderConfig, params: &EncoderParams) -> Result<()> {
    let header = Header {
        kind: "planted".into(),
        model: config.clone(),
        train: None,
        data: DataRef::default(),
        best_score: None,
        best_step: 0,
        tensors: Vec::new(),
    };
    write(path, &header, params)
}

pub fn load_planted(path: &Path) -> Result<(EncoderConfig, EncoderParams)> {
    let (h, params) = read::<EncoderConfig, EncoderParams>(path, "planted", EncoderParams::zeros)?;
    Ok((h.model, params))
}
