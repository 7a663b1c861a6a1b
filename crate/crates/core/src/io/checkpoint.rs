//! Score-network checkpoints: named parameter tensors in a binary
//! payload, with a JSON sidecar (`<path>.json`) holding the network
//! and diffusion configuration, normalization constants, deployment
//! settings, the training report, and a SHA-256 hash of the payload.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_exact, read_u32, sha256_hex, write_u32};
use crate::conditioning::UpscaleMethod;
use crate::diffusion::{DiffusionConfig, Normalization, TrainReport};
use crate::error::{Error, Result};
use crate::network::{ScoreNetConfig, ScoreNetwork};
use crate::solver::ClosureKind;

use super::dataset::manifest_path;

const MAGIC: &[u8; 4] = b"SCLK";
const FORMAT_VERSION: u32 = 1;

/// Storage precision for the parameter tensors. Both are readable;
/// `F32` halves the file at the cost of rounding the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorDtype {
    F64,
    F32,
}

impl TensorDtype {
    fn code(self) -> u8 {
        match self {
            TensorDtype::F64 => 0,
            TensorDtype::F32 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TensorDtype::F64),
            1 => Ok(TensorDtype::F32),
            other => Err(Error::Format(format!("unsupported dtype code {other}"))),
        }
    }
}

/// Everything needed to rebuild and deploy the network, minus the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub net_config: ScoreNetConfig,
    pub diffusion: DiffusionConfig,
    pub normalization: Normalization,
    pub kind: ClosureKind,
    pub upscale_method: UpscaleMethod,
    pub sparse_n: usize,
    pub train_report: Option<TrainReport>,
    pub dtype: TensorDtype,
    pub content_hash: String,
}

/// A trained network together with its deployment context.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: ScoreNetwork,
    pub diffusion: DiffusionConfig,
    pub normalization: Normalization,
    pub kind: ClosureKind,
    pub upscale_method: UpscaleMethod,
    pub sparse_n: usize,
    pub train_report: Option<TrainReport>,
}

fn write_tensor<W: Write>(
    w: &mut W,
    name: &str,
    dims: &[usize],
    data: &[f64],
    dtype: TensorDtype,
) -> Result<()> {
    let name_bytes = name.as_bytes();
    if name_bytes.len() > u16::MAX as usize {
        return Err(Error::Format(format!("tensor name too long: {name}")));
    }
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        write_u32(w, d as u32)?;
    }
    match dtype {
        TensorDtype::F64 => {
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        TensorDtype::F32 => {
            for &v in data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, dtype: TensorDtype) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let name_len = u16::from_le_bytes(read_exact::<_, 2>(r)?) as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Format("tensor name is not valid UTF-8".into()))?;
    let rank = read_exact::<_, 1>(r)?[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let len: usize = dims.iter().product();
    let mut data = Vec::with_capacity(len);
    match dtype {
        TensorDtype::F64 => {
            for _ in 0..len {
                data.push(f64::from_le_bytes(read_exact::<_, 8>(r)?));
            }
        }
        TensorDtype::F32 => {
            for _ in 0..len {
                data.push(f32::from_le_bytes(read_exact::<_, 4>(r)?) as f64);
            }
        }
    }
    Ok((name, dims, data))
}

/// Write the checkpoint payload and its sidecar; returns the content hash.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint, dtype: TensorDtype) -> Result<String> {
    let tensors = ckpt.network.params().flat();
    let mut payload = Vec::new();
    payload.extend_from_slice(MAGIC);
    write_u32(&mut payload, FORMAT_VERSION)?;
    payload.push(dtype.code());
    write_u32(&mut payload, tensors.len() as u32)?;
    for (name, dims, data) in &tensors {
        write_tensor(&mut payload, name, dims, data, dtype)?;
    }
    let content_hash = sha256_hex(&payload);
    fs::write(path, &payload)?;

    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        net_config: *ckpt.network.config(),
        diffusion: ckpt.diffusion,
        normalization: ckpt.normalization,
        kind: ckpt.kind,
        upscale_method: ckpt.upscale_method,
        sparse_n: ckpt.sparse_n,
        train_report: ckpt.train_report.clone(),
        dtype,
        content_hash: content_hash.clone(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Format(format!("checkpoint meta serialization failed: {e}")))?;
    fs::write(manifest_path(path), json)?;
    Ok(content_hash)
}

/// Read a checkpoint, verify its hash, rebuild the network, and load
/// the stored tensors into it, checking every name and shape.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let meta_text = fs::read_to_string(manifest_path(path))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Format(format!("bad checkpoint meta: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {}",
            meta.format_version
        )));
    }

    let payload = fs::read(path)?;
    let hash = sha256_hex(&payload);
    if hash != meta.content_hash {
        return Err(Error::Format(format!(
            "content hash mismatch: meta says {}, payload is {hash}",
            meta.content_hash
        )));
    }

    let mut r = Cursor::new(payload.as_slice());
    let magic = read_exact::<_, 4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {version}"
        )));
    }
    let dtype = TensorDtype::from_code(read_exact::<_, 1>(&mut r)?[0])?;
    if dtype != meta.dtype {
        return Err(Error::Format(
            "dtype in payload disagrees with the meta file".into(),
        ));
    }
    let tensor_count = read_u32(&mut r)? as usize;

    let mut network = ScoreNetwork::new(meta.net_config)?;
    let mut params = network.params().clone();
    {
        let mut slots = params.flat_mut();
        if tensor_count != slots.len() {
            return Err(Error::Format(format!(
                "checkpoint has {tensor_count} tensors, network expects {}",
                slots.len()
            )));
        }
        for (slot_name, slot_data) in slots.iter_mut() {
            let (name, dims, data) = read_tensor(&mut r, dtype)?;
            if &name != slot_name {
                return Err(Error::Format(format!(
                    "tensor order mismatch: found {name}, expected {slot_name}"
                )));
            }
            let len: usize = dims.iter().product();
            if len != slot_data.len() {
                return Err(Error::Format(format!(
                    "tensor {name} has {len} values, network expects {}",
                    slot_data.len()
                )));
            }
            slot_data.copy_from_slice(&data);
        }
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(Error::Format(format!(
            "{} unexpected trailing bytes after the last tensor",
            trailing.len()
        )));
    }
    network.set_params(params)?;

    Ok(Checkpoint {
        network,
        diffusion: meta.diffusion,
        normalization: meta.normalization,
        kind: meta.kind,
        upscale_method: meta.upscale_method,
        sparse_n: meta.sparse_n,
        train_report: meta.train_report,
    })
}
