//! Versioned JSON snapshot of parameters, optimizer state and the prior queue.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::memory::MemoryQueue;
use crate::nn::ParamStore;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Number of tasks trained so far.
    pub tasks_done: usize,
    pub task_names: Vec<String>,
    pub config: TrainConfig,
    /// Parameters with their Adam moments.
    pub params: ParamStore,
    pub queue: MemoryQueue,
    pub optimizer_steps: usize,
    pub pretrain_steps: usize,
}

/// `checkpoint_task{K}_seed{seed}.json` inside `dir`.
pub fn checkpoint_path(dir: &Path, task: usize, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_task{task}_seed{seed}.json"))
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(ck).map_err(|e| Error::InvalidValue(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads a checkpoint and validates its version, config and queue.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let malformed = |msg: String| Error::Malformed {
        path: path.to_path_buf(),
        msg,
    };
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| malformed(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing schema_version".into()))?;
    if found != u64::from(CHECKPOINT_SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let ck: Checkpoint = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    ck.config.validate().map_err(|e| malformed(e.to_string()))?;
    ck.queue.validate().map_err(|e| malformed(e.to_string()))?;
    if !ck.params.all_finite() {
        return Err(malformed("non-finite parameters".into()));
    }
    if ck.task_names.len() != ck.tasks_done {
        return Err(malformed("task name count does not match tasks_done".into()));
    }
    Ok(ck)
}
