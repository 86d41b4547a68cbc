//! Binary model snapshots.
//!
//! Layout: the magic bytes `DSP1`, a little-endian `u32` manifest length, a
//! compact JSON manifest (config plus each parameter's name, shape and byte
//! offset into the blob section), then every parameter as little-endian
//! `f64` values in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::LmModel;

pub const MAGIC: &[u8; 4] = b"DSP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes(model: &LmModel) -> Result<Vec<u8>> {
    let named = model.named_parameters();
    let mut offset = 0u64;
    let params = named
        .iter()
        .map(|(name, t)| {
            let entry = ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.numel() as u64;
            entry
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        params,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse the header; returns the manifest and the blob section.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing DSP1 header".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::Checkpoint(format!("manifest of {len} bytes is truncated")))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported",
            manifest.format_version
        )));
    }
    Ok((manifest, &bytes[8 + len..]))
}

pub fn from_bytes(bytes: &[u8]) -> Result<LmModel> {
    let (manifest, blobs) = read_manifest(bytes)?;
    let model = LmModel::new(manifest.config.clone())?;
    let named = model.named_parameters();
    if named.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters stored, the config builds {}",
            manifest.params.len(),
            named.len()
        )));
    }
    for ((name, t), entry) in named.iter().zip(&manifest.params) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "stored parameter {} {:?} does not match {name} {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let start = entry.offset as usize;
        let raw = blobs
            .get(start..start + 8 * t.numel())
            .ok_or_else(|| Error::Checkpoint(format!("data for {name} is truncated")))?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("eight bytes"));
        }
    }
    Ok(model)
}

pub fn save(model: &LmModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, to_bytes(model)?).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<LmModel> {
    from_bytes(&fs::read(path).map_err(Error::io(path))?)
}
