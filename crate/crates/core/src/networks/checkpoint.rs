//! Single-file checkpoint archive.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, JSON
//! manifest (format version, model config, caller metadata, parameter
//! names/shapes/offsets, SHA-256 of the payload), then all parameter values
//! as little-endian `f64` in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::{Model, ModelConfig};
use crate::diffnum::Array;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"V2SFMCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Offset in values (not bytes) into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    meta: serde_json::Value,
    params: Vec<Entry>,
    payload_sha256: String,
}

/// Serialises `model` with arbitrary JSON metadata.
pub fn to_bytes(model: &Model, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.params.count() * 8);
    let mut entries = Vec::with_capacity(model.params.len());
    let mut offset = 0;
    for (name, value) in model.params.iter() {
        entries.push(Entry {
            name: name.clone(),
            shape: value.shape().to_vec(),
            offset,
        });
        offset += value.len();
        for v in value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: VERSION,
        config: model.config.clone(),
        meta: meta.clone(),
        params: entries,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(Model, serde_json::Value)> {
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", origin.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + mlen).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json)?;
    if manifest.version != VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: VERSION,
        });
    }
    let payload = &bytes[16 + mlen..];
    let actual = hex::encode(Sha256::digest(payload));
    if actual != manifest.payload_sha256 {
        return Err(Error::Checksum {
            path: origin.to_path_buf(),
            expected: manifest.payload_sha256,
            actual,
        });
    }
    let mut entries = BTreeMap::new();
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let raw = payload
            .get(e.offset * 8..(e.offset + n) * 8)
            .ok_or_else(|| bad(&format!("payload too short for `{}`", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.insert(e.name.clone(), Array::new(&e.shape, data)?);
    }
    manifest.config.validate()?;
    let expected = ParamStore::init(&manifest.config.param_specs(), 0)?;
    for (name, value) in expected.iter() {
        let got = entries
            .get(name)
            .ok_or_else(|| bad(&format!("missing parameter `{name}`")))?;
        if got.shape() != value.shape() {
            return Err(bad(&format!("parameter `{name}` has shape {:?}, config needs {:?}", got.shape(), value.shape())));
        }
    }
    if entries.len() != expected.len() {
        return Err(bad("archive holds parameters the config does not declare"));
    }
    Ok((
        Model {
            config: manifest.config,
            params: ParamStore::from_entries(entries),
        },
        manifest.meta,
    ))
}

/// Writes atomically (temporary file then rename).
pub fn save(model: &Model, path: &Path, meta: &serde_json::Value) -> Result<()> {
    let bytes = to_bytes(model, meta)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
