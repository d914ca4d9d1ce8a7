//! Binary checkpoint container: a JSON header plus named f32 tensors.
//!
//! The format is deliberately boring — everything little-endian, one
//! self-describing record per tensor, a SHA-256 trailer over the payload —
//! so resume is bitwise-faithful and corruption fails loudly instead of
//! deserializing garbage.
//!
//! ```text
//! magic "CGCKPT01" | header_len u64 | header JSON
//! n_tensors u64
//! per tensor: name_len u64 | name utf8 | ndim u64 | dims u64... | data f32...
//! sha256 of everything above (32 bytes)
//! ```

use std::io::{Cursor, Read as _};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsio;
use crate::nn::ParamSet;

const MAGIC: &[u8; 8] = b"CGCKPT01";

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub data: ArrayD<f32>,
}

/// A checkpoint: structured metadata plus a flat list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Caller-defined metadata (training config, epoch, RNG state, ...).
    pub header: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header =
            serde_json::to_vec(&self.header).expect("checkpoint header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u64::<LittleEndian>(header.len() as u64).unwrap();
        buf.extend_from_slice(&header);
        buf.write_u64::<LittleEndian>(self.tensors.len() as u64)
            .unwrap();
        for t in &self.tensors {
            buf.write_u64::<LittleEndian>(t.name.len() as u64).unwrap();
            buf.extend_from_slice(t.name.as_bytes());
            buf.write_u64::<LittleEndian>(t.data.ndim() as u64).unwrap();
            for &d in t.data.shape() {
                buf.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            let data = t
                .data
                .as_slice()
                .expect("checkpoint tensors are standard layout");
            for &v in data {
                buf.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| bad_checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 32 {
            return Err(bad("file too short"));
        }
        let (payload, trailer) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(payload);
        if digest.as_slice() != trailer {
            return Err(bad("integrity hash mismatch"));
        }
        let mut r = Cursor::new(payload);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let header_len = r
            .read_u64::<LittleEndian>()
            .map_err(|_| bad("truncated header length"))? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)
            .map_err(|_| bad("truncated header"))?;
        let header = serde_json::from_slice(&header_bytes)
            .map_err(|e| bad(&format!("header is not valid JSON: {e}")))?;

        let n_tensors = r
            .read_u64::<LittleEndian>()
            .map_err(|_| bad("truncated tensor count"))? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r
                .read_u64::<LittleEndian>()
                .map_err(|_| bad("truncated name length"))? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = r
                .read_u64::<LittleEndian>()
                .map_err(|_| bad("truncated rank"))? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(
                    r.read_u64::<LittleEndian>()
                        .map_err(|_| bad("truncated dims"))? as usize,
                );
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0.0f32; len];
            for v in data.iter_mut() {
                *v = r
                    .read_f32::<LittleEndian>()
                    .map_err(|_| bad("truncated tensor data"))?;
            }
            let data = ArrayD::from_shape_vec(dims, data)
                .map_err(|_| bad("inconsistent tensor shape"))?;
            tensors.push(TensorRecord { name, data });
        }
        if r.position() != payload.len() as u64 {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Write atomically (temp file + rename).
    pub fn write(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read_bytes(path)?).map_err(|e| match e {
            Error::BadCheckpoint { reason, .. } => Error::BadCheckpoint {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

/// A checkpoint-format error without a file path yet (attached by callers
/// that know one).
fn bad_checkpoint(reason: String) -> Error {
    Error::BadCheckpoint {
        path: std::path::PathBuf::new(),
        reason,
    }
}

/// Snapshot a parameter set as prefixed tensor records.
pub fn pack_params<P: ParamSet<f32>>(prefix: &str, params: &P) -> Vec<TensorRecord> {
    params
        .tensors()
        .into_iter()
        .map(|(name, view)| TensorRecord {
            name: format!("{prefix}{name}"),
            data: view.to_owned(),
        })
        .collect()
}

/// Restore a parameter set from prefixed records. Every tensor under the
/// prefix must be present with its exact shape, and none may be left over.
pub fn unpack_params<P: ParamSet<f32>>(
    prefix: &str,
    records: &[TensorRecord],
    params: &mut P,
) -> Result<()> {
    let mut by_name: std::collections::BTreeMap<&str, &TensorRecord> = records
        .iter()
        .filter(|r| r.name.starts_with(prefix))
        .map(|r| (r.name.as_str(), r))
        .collect();
    for (name, mut view) in params.tensors_mut() {
        let full = format!("{prefix}{name}");
        let rec = by_name
            .remove(full.as_str())
            .ok_or_else(|| bad_checkpoint(format!("missing tensor {full:?}")))?;
        if rec.data.shape() != view.shape() {
            return Err(bad_checkpoint(format!(
                "tensor {:?} has shape {:?}, expected {:?}",
                full,
                rec.data.shape(),
                view.shape()
            )));
        }
        view.assign(&rec.data);
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(bad_checkpoint(format!(
            "unexpected tensor {name:?} in checkpoint"
        )));
    }
    Ok(())
}
