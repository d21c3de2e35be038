//! Self-describing checkpoint archive.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header,
//! then every tensor listed in the header as little-endian `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, HeadRole, NetworkBundle, Stage};
use crate::error::{Result, RosError};

const MAGIC: &[u8; 8] = b"ROSCKPT\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub stage: Stage,
    pub n_known: usize,
    pub encoder: EncoderConfig,
    pub roles: Vec<(HeadRole, usize, usize)>,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(bundle: &NetworkBundle, config_hash: &str, mut out: W) -> Result<()> {
    let state = bundle.state();
    let f = bundle.encoder.feature_dim();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        stage: bundle.stage,
        n_known: bundle.n_known,
        encoder: bundle.encoder.config(),
        roles: bundle
            .roles()
            .into_iter()
            .map(|r| (r, r.input_dim(f), r.output_dim(bundle.n_known)))
            .collect(),
        config_hash: config_hash.to_owned(),
        tensors: state
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| RosError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + header_bytes.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (_, tensor) in &state {
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| RosError::Checkpoint(e.to_string()))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(NetworkBundle, CheckpointHeader)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| RosError::Checkpoint(e.to_string()))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(RosError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16 + header_len;
    if bytes.len() < body {
        return Err(RosError::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| RosError::Checkpoint(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(RosError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    // Weights are overwritten below, so the init seed is irrelevant.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut bundle = NetworkBundle::new(&header.encoder, header.n_known, header.stage, &mut rng)?;
    let mut offset = body;
    let mut loaded = std::collections::BTreeMap::new();
    for entry in &header.tensors {
        let n = entry.rows * entry.cols;
        let end = offset + 4 * n;
        if bytes.len() < end {
            return Err(RosError::Checkpoint(format!("truncated tensor {}", entry.name)));
        }
        let values: Vec<f32> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let arr = Array2::from_shape_vec((entry.rows, entry.cols), values)
            .map_err(|e| RosError::Checkpoint(e.to_string()))?;
        loaded.insert(entry.name.clone(), arr);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(RosError::Checkpoint("trailing bytes after the last tensor".into()));
    }
    for (name, slot) in bundle.state_mut() {
        let value = loaded
            .remove(&name)
            .ok_or_else(|| RosError::Checkpoint(format!("missing tensor {name}")))?;
        if value.dim() != slot.dim() {
            return Err(RosError::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                value.dim(),
                slot.dim()
            )));
        }
        slot.assign(&value);
    }
    if let Some(name) = loaded.keys().next() {
        return Err(RosError::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok((bundle, header))
}

pub fn save_checkpoint(bundle: &NetworkBundle, config_hash: &str, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| RosError::io(parent, e))?;
    }
    let mut bytes = Vec::new();
    write_checkpoint(bundle, config_hash, &mut bytes)?;
    fs::write(path, bytes).map_err(|e| RosError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkBundle, CheckpointHeader)> {
    let file = fs::File::open(path).map_err(|e| RosError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
