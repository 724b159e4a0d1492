//! Checkpoints: parameters and optimizer moments as THR1 files plus a JSON
//! manifest carrying the run config and a content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thor_core::autodiff::{Optimizer, OptimizerConfig, ParamStore};
use thor_core::data::{load_params, load_tensors, save_params, save_tensors, TensorEntry};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const CHECKPOINT_FORMAT: &str = "thor-checkpoint-v1";
pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
/// File under `checkpoints/` naming the newest complete checkpoint.
pub const LATEST_FILE: &str = "latest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub steps_taken: u64,
    pub first: Vec<TensorEntry>,
    pub second: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub step: usize,
    pub config: RunConfig,
    pub params: Vec<TensorEntry>,
    pub optimizer: OptimizerState,
    /// Hash over all tensor files, see [`content_hash`].
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style tree hash: each file is hashed as `blob <len>\0<bytes>`, then
/// the sorted `<blob hash> <name>` lines are hashed.
pub fn content_hash(dir: &Path, files: &[&str]) -> Result<String> {
    let mut names: Vec<&str> = files.to_vec();
    names.sort_unstable();
    let mut tree = Sha256::new();
    for name in names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()).as_bytes());
        blob.update(&bytes);
        tree.update(format!("{} {name}\n", hex(&blob.finalize())).as_bytes());
    }
    Ok(hex(&tree.finalize()))
}

fn entry_files(m: &CheckpointManifest) -> Vec<&str> {
    m.params
        .iter()
        .chain(&m.optimizer.first)
        .chain(&m.optimizer.second)
        .map(|e| e.file.as_str())
        .collect()
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step-{step:06}")
}

/// Writes `root/step-NNNNNN/` through a temporary directory so a crash never
/// leaves a partial checkpoint, then points `root/latest` at it.
pub fn save_checkpoint(
    root: &Path,
    step: usize,
    config: &RunConfig,
    store: &ParamStore<f64>,
    opt: &Optimizer<f64>,
) -> Result<(PathBuf, String)> {
    let name = checkpoint_name(step);
    let tmp = root.join(format!(".{name}.tmp"));
    let dir = root.join(&name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let params = save_params(store, &tmp, "p")?;
    let (m, v) = opt.moments();
    let mut manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        step,
        config: config.clone(),
        params,
        optimizer: OptimizerState {
            config: *opt.config(),
            steps_taken: opt.steps_taken(),
            first: save_tensors(m, &tmp, "m")?,
            second: save_tensors(v, &tmp, "v")?,
        },
        sha256: String::new(),
    };
    manifest.sha256 = content_hash(&tmp, &entry_files(&manifest))?;
    let path = tmp.join(CHECKPOINT_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    fs::rename(&tmp, &dir).map_err(|e| CliError::io(&dir, e))?;
    let latest = root.join(LATEST_FILE);
    fs::write(&latest, format!("{name}\n")).map_err(|e| CliError::io(&latest, e))?;
    Ok((dir, manifest.sha256))
}

/// Accepts a checkpoint directory or a `checkpoints/` root with `latest`.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(CHECKPOINT_MANIFEST).exists() {
        return Ok(path.to_path_buf());
    }
    let latest = path.join(LATEST_FILE);
    if latest.exists() {
        let name = fs::read_to_string(&latest).map_err(|e| CliError::io(&latest, e))?;
        return Ok(path.join(name.trim()));
    }
    let nested = path.join("checkpoints");
    if nested.join(LATEST_FILE).exists() {
        return resolve_checkpoint(&nested);
    }
    Err(CliError::io(path, "no checkpoint found"))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(CliError::io(&path, format!("checkpoint format {:?}", m.format)));
    }
    let hash = content_hash(dir, &entry_files(&m))?;
    if hash != m.sha256 {
        return Err(CliError::io(&path, "content hash does not match the tensor files"));
    }
    Ok(m)
}

/// Loads parameters into `store` (which must have the checkpoint's layout)
/// and the optimizer state into `opt`.
pub fn restore(
    dir: &Path,
    m: &CheckpointManifest,
    store: &mut ParamStore<f64>,
    opt: Option<&mut Optimizer<f64>>,
) -> Result<()> {
    load_params(store, dir, &m.params).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    if let Some(opt) = opt {
        let first = load_tensors(dir, &m.optimizer.first)?;
        let second = load_tensors(dir, &m.optimizer.second)?;
        opt.restore(m.optimizer.steps_taken, first, second);
    }
    Ok(())
}
