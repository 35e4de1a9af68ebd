//! Named-tensor archive: magic, version, JSON header, raw little-endian
//! payload, SHA-256 trailer over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::io::write_atomic;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 8] = b"CINCGAN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

pub fn encode<T: Real>(meta: &serde_json::Value, tensors: &[(String, &Tensor<T>)]) -> Result<Vec<u8>> {
    let header = Header {
        dtype: T::DTYPE.into(),
        tensors: tensors
            .iter()
            .map(|(name, t)| Entry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * T::BYTES).sum();
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + payload + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Parses and verifies an archive. Nothing is returned unless the magic,
/// version, checksum, dtype and every tensor length check out.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor<T>)>)> {
    if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a model archive (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "archive format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corrupt("checksum mismatch; archive is corrupt or truncated"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length exceeds archive"))?;
    let header: Header = serde_json::from_slice(&body[20..hend])?;
    if header.dtype != T::DTYPE {
        return Err(corrupt(format!(
            "archive holds {} tensors, expected {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let mut pos = hend;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let end = pos + n * T::BYTES;
        if end > body.len() {
            return Err(corrupt(format!("tensor {} is truncated", e.name)));
        }
        let data = body[pos..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push((e.name, Tensor::from_vec(e.shape, data)?));
        pos = end;
    }
    if pos != body.len() {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    Ok((header.meta, tensors))
}

pub fn save<T: Real>(path: &Path, meta: &serde_json::Value, tensors: &[(String, &Tensor<T>)]) -> Result<()> {
    write_atomic(path, &encode(meta, tensors)?)
}

pub fn load<T: Real>(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor<T>)>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
