//! Versioned JSON container for the queue.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MemoryQueue, PriorComponent};
use crate::error::{Error, Result};

pub const QUEUE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct QueueFile {
    schema_version: u32,
    capacity: usize,
    components: Vec<PriorComponent>,
    weights: Vec<f64>,
    task_counts: Vec<usize>,
    newest: Option<usize>,
}

pub fn save_queue(queue: &MemoryQueue, path: impl AsRef<Path>) -> Result<()> {
    let file = QueueFile {
        schema_version: QUEUE_SCHEMA_VERSION,
        capacity: queue.capacity,
        components: queue.components.clone(),
        weights: queue.weights.clone(),
        task_counts: queue.task_counts.clone(),
        newest: queue.newest,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidValue(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads and re-validates a queue; any defect rejects the whole file.
pub fn load_queue(path: impl AsRef<Path>) -> Result<MemoryQueue> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let malformed = |msg: String| Error::Malformed {
        path: path.to_path_buf(),
        msg,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing schema_version".into()))?;
    if found != u64::from(QUEUE_SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: QUEUE_SCHEMA_VERSION,
        });
    }
    let file: QueueFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    MemoryQueue::from_parts(file.components, file.weights, file.capacity, file.task_counts, file.newest)
        .map_err(|e| malformed(e.to_string()))
}
