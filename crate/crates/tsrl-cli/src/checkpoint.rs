//! Checkpoints: a JSON manifest describing parameter layout plus a raw blob
//! of little-endian f32 values in manifest order.
//!
//! Loading rebuilds the network from the echoed run config and validates the
//! manifest and blob completely before touching any parameter, so a bad file
//! can never leave a half-written network behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsrl_core::agent::RngSnapshot;
use tsrl_core::error::Error;
use tsrl_core::qnet::QNetwork;
use tsrl_core::Result;

use crate::config::RunConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// One parameter's slice of the blob.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Element count (4 bytes each).
    pub count: u64,
}

/// ChaCha stream position. `word_pos` is a u128, stored as decimal text so the
/// manifest survives JSON tooling that only understands doubles.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngStateEntry {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: String,
}

impl From<&RngSnapshot> for RngStateEntry {
    fn from(snap: &RngSnapshot) -> Self {
        RngStateEntry {
            seed: snap.seed,
            stream: snap.stream,
            word_pos: snap.word_pos.to_string(),
        }
    }
}

impl RngStateEntry {
    pub fn to_snapshot(&self) -> Result<RngSnapshot> {
        let word_pos = self.word_pos.parse::<u128>().map_err(|_| {
            Error::Config(format!("checkpoint: bad rng word_pos {:?}", self.word_pos))
        })?;
        Ok(RngSnapshot { seed: self.seed, stream: self.stream, word_pos })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngState {
    pub explore: RngStateEntry,
    pub replay: RngStateEntry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    /// Blob file name, relative to the manifest's directory.
    pub blob_file: String,
    /// Total blob length in bytes; equals the sum of entry counts times 4.
    pub blob_len: u64,
    pub params: Vec<ParamEntry>,
    pub config: RunConfig,
    pub env_steps: u64,
    pub train_steps: u64,
    pub rng: RngState,
}

/// Everything saved alongside the parameters.
#[derive(Clone, Debug)]
pub struct CheckpointState {
    pub config: RunConfig,
    pub env_steps: u64,
    pub train_steps: u64,
    pub explore: RngSnapshot,
    pub replay: RngSnapshot,
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub net: QNetwork<f32>,
    pub manifest: CheckpointManifest,
}

fn file_err(path: &Path, e: std::io::Error) -> Error {
    Error::External(format!("{}: {}", path.display(), e))
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| file_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| file_err(path, e))
}

fn blob_name(manifest_path: &Path) -> String {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".to_string());
    format!("{}.bin", stem)
}

/// Write `<path>` (manifest JSON) and its sibling `<stem>.bin` blob.
pub fn save_checkpoint(path: &Path, net: &QNetwork<f32>, state: &CheckpointState) -> Result<()> {
    let mut entries = Vec::with_capacity(net.params.len());
    let mut blob: Vec<u8> = Vec::with_capacity(net.params.scalar_count() * 4);
    for param in net.params.iter() {
        entries.push(ParamEntry {
            name: param.name.clone(),
            shape: param.value.shape().to_vec(),
            offset: blob.len() as u64,
            count: param.value.len() as u64,
        });
        for &v in param.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        blob_file: blob_name(path),
        blob_len: blob.len() as u64,
        params: entries,
        config: state.config.clone(),
        env_steps: state.env_steps,
        train_steps: state.train_steps,
        rng: RngState {
            explore: RngStateEntry::from(&state.explore),
            replay: RngStateEntry::from(&state.replay),
        },
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::External(format!("checkpoint manifest encode: {}", e)))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    write_atomically(&dir.join(&manifest.blob_file), &blob)?;
    write_atomically(path, json.as_bytes())
}

fn manifest_err(path: &Path, message: String) -> Error {
    Error::Config(format!("checkpoint {}: {}", path.display(), message))
}

/// Read a manifest + blob and rebuild the network bit-exactly.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| manifest_err(path, format!("bad manifest: {}", e)))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(manifest_err(
            path,
            format!("version {} unsupported, expected {}", manifest.version, CHECKPOINT_VERSION),
        ));
    }
    manifest.config.validate()?;
    let net_config = manifest.config.network_config()?;
    let mut net = QNetwork::<f32>::new(net_config, manifest.config.seed)?;

    if manifest.params.len() != net.params.len() {
        return Err(manifest_err(
            path,
            format!(
                "manifest lists {} parameters, network has {}",
                manifest.params.len(),
                net.params.len()
            ),
        ));
    }
    let mut expected_offset = 0u64;
    for (idx, entry) in manifest.params.iter().enumerate() {
        let param = net.params.get(idx);
        if entry.name != param.name {
            return Err(manifest_err(
                path,
                format!("parameter {}: expected name {:?}, found {:?}", idx, param.name, entry.name),
            ));
        }
        if entry.shape != param.value.shape() {
            return Err(manifest_err(
                path,
                format!(
                    "parameter {}: shape {:?} does not match network shape {:?}",
                    entry.name,
                    entry.shape,
                    param.value.shape()
                ),
            ));
        }
        if entry.count != param.value.len() as u64 {
            return Err(manifest_err(
                path,
                format!("parameter {}: count {} does not match shape", entry.name, entry.count),
            ));
        }
        if entry.offset != expected_offset {
            return Err(manifest_err(
                path,
                format!(
                    "parameter {}: offset {} is not contiguous (expected {})",
                    entry.name, entry.offset, expected_offset
                ),
            ));
        }
        expected_offset += entry.count * 4;
    }
    if manifest.blob_len != expected_offset {
        return Err(manifest_err(
            path,
            format!("blob_len {} does not match parameter total {}", manifest.blob_len, expected_offset),
        ));
    }

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let blob_path = dir.join(&manifest.blob_file);
    let blob = std::fs::read(&blob_path).map_err(|e| file_err(&blob_path, e))?;
    if blob.len() as u64 != manifest.blob_len {
        return Err(manifest_err(
            path,
            format!("blob {} is {} bytes, manifest expects {}", manifest.blob_file, blob.len(), manifest.blob_len),
        ));
    }

    for (idx, entry) in manifest.params.iter().enumerate() {
        let start = entry.offset as usize;
        let values = net.params.value_mut(idx).data_mut();
        for (i, v) in values.iter_mut().enumerate() {
            let at = start + i * 4;
            *v = f32::from_le_bytes([blob[at], blob[at + 1], blob[at + 2], blob[at + 3]]);
        }
    }
    Ok(LoadedCheckpoint { net, manifest })
}

/// Manifest path for a periodic checkpoint inside a run directory.
pub fn periodic_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{:08}.json", step))
}

/// Manifest path for a run's final checkpoint.
pub fn final_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.json")
}
