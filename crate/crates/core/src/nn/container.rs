//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic `MTBLCKPT`, `u32` format version, `u64` header
//! length, a JSON header, then every tensor's `f32` values little-endian in
//! header order. The header holds the payload kind, free-form metadata, and
//! a name/shape/offset index of the tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{TensorData, WeightSet};
use crate::error::{ensure, Error, Result};

const MAGIC: &[u8; 8] = b"MTBLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    /// Weight groups, e.g. `vae` and `denoiser`.
    pub groups: Vec<(String, WeightSet)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for (group, weights) in &c.groups {
        for (name, t) in weights {
            ensure!(
                t.shape.iter().product::<usize>() == t.data.len(),
                "tensor {group}/{name} shape does not match its data"
            );
            entries.push(Entry {
                group: group.clone(),
                name: name.clone(),
                shape: t.shape.clone(),
                offset: payload.len() / 4,
            });
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        kind: c.kind.clone(),
        meta: c.meta.clone(),
        tensors: entries,
    })
    .map_err(|e| Error::runtime(format!("checkpoint header: {e}")))?;
    let mut bytes = Vec::with_capacity(20 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    crate::fsutil::write_atomic(path, &bytes)
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::invalid(format!("{}: {msg}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported container version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(&format!("header: {e}")))?;
    let payload = &bytes[header_end..];
    let mut groups: Vec<(String, WeightSet)> = Vec::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset * 4;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(bad(&format!("tensor {} runs past end of file", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let group = match groups.iter_mut().find(|(g, _)| *g == e.group) {
            Some((_, w)) => w,
            None => {
                groups.push((e.group.clone(), WeightSet::new()));
                &mut groups.last_mut().unwrap().1
            }
        };
        group.insert(e.name, TensorData { shape: e.shape, data });
    }
    Ok(Container {
        kind: header.kind,
        meta: header.meta,
        groups,
    })
}

impl Container {
    pub fn group(&self, name: &str) -> Result<&WeightSet> {
        self.groups
            .iter()
            .find(|(g, _)| g == name)
            .map(|(_, w)| w)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no {name:?} weights")))
    }
}
