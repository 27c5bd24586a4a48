//! Checkpoints: a JSON manifest `<stem>.json` beside a payload `<stem>.bin`
//! of little-endian `f32` values concatenated in manifest order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected a `{expected}` checkpoint, found `{found}`")]
    KindMismatch { path: String, expected: String, found: String },
    #[error("{path}: payload has {found} bytes, manifest requires {expected}")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("{path}: inconsistent manifest: {reason}")]
    Shape { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub payload_bytes: usize,
    pub params: Vec<ParamRecord>,
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".json")
}

pub fn payload_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".bin")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let tmp = with_suffix(path, ".tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Saves `params` under `stem`; the manifest is written after the payload.
pub fn save_checkpoint(
    params: &ParamSet,
    kind: &str,
    config: &serde_json::Value,
    fingerprint: &str,
    stem: &Path,
) -> Result<Manifest, CheckpointError> {
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut payload = Vec::with_capacity(params.num_values() * 4);
    let mut records = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        records.push(ParamRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
            trainable: t.requires_grad(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        fingerprint: fingerprint.to_string(),
        config: config.clone(),
        payload_bytes: payload.len(),
        params: records,
    };
    write_atomic(&payload_path(stem), &payload)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    write_atomic(&manifest_path(stem), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(stem: &Path) -> Result<Manifest, CheckpointError> {
    let path = manifest_path(stem);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| CheckpointError::Manifest {
        path: path.display().to_string(),
        source,
    })
}

/// Loads and validates a checkpoint of the given kind.
pub fn load_checkpoint(stem: &Path, expected_kind: &str) -> Result<(ParamSet, Manifest), CheckpointError> {
    let manifest = read_manifest(stem)?;
    let mpath = manifest_path(stem).display().to_string();
    if manifest.kind != expected_kind {
        return Err(CheckpointError::KindMismatch {
            path: mpath,
            expected: expected_kind.to_string(),
            found: manifest.kind,
        });
    }
    let ppath = payload_path(stem);
    let payload = fs::read(&ppath).map_err(io_err(&ppath))?;
    let shape_err = |reason: String| CheckpointError::Shape {
        path: mpath.clone(),
        reason,
    };
    let mut expected_offset = 0usize;
    for r in &manifest.params {
        if r.offset != expected_offset {
            return Err(shape_err(format!("`{}` at offset {} instead of {expected_offset}", r.name, r.offset)));
        }
        expected_offset += 4 * r.shape.iter().product::<usize>();
    }
    if expected_offset != manifest.payload_bytes {
        return Err(shape_err(format!(
            "shapes cover {expected_offset} bytes but payload_bytes is {}",
            manifest.payload_bytes
        )));
    }
    if payload.len() != manifest.payload_bytes {
        return Err(CheckpointError::Truncated {
            path: ppath.display().to_string(),
            expected: manifest.payload_bytes,
            found: payload.len(),
        });
    }
    let mut params = ParamSet::new();
    for r in &manifest.params {
        let n: usize = r.shape.iter().product();
        let data = payload[r.offset..r.offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut t = Tensor::new(r.shape.clone(), data).map_err(|e| shape_err(e.to_string()))?;
        t.set_requires_grad(r.trainable);
        params.insert(r.name.clone(), t).map_err(|e| shape_err(e.to_string()))?;
    }
    Ok((params, manifest))
}
