//! Task state persisted between CLI invocations.
//!
//! `start` records the task's configuration under `<state_dir>/<task_id>.json`
//! so later `stop`, `status`, and `aggregate` invocations know which agents to
//! contact without the original config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::TaskConfig;

/// Everything a later invocation needs to address a running task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub service: String,
    pub started_unix: u64,
    pub config: TaskConfig,
}

fn record_path(state_dir: &Path, task_id: &str) -> PathBuf {
    state_dir.join(format!("{task_id}.json"))
}

/// Writes the record atomically (write to a temp name, then rename).
pub fn save(state_dir: &Path, record: &TaskRecord) -> Result<()> {
    fs::create_dir_all(state_dir)
        .with_context(|| format!("cannot create state dir {}", state_dir.display()))?;
    let path = record_path(state_dir, &record.task_id);
    let tmp = state_dir.join(format!(".{}.json.tmp", record.task_id));
    let body = serde_json::to_string_pretty(record)?;
    fs::write(&tmp, body).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("cannot rename to {}", path.display()))?;
    Ok(())
}

/// Loads the record for `task_id`, failing with a readable message.
pub fn load(state_dir: &Path, task_id: &str) -> Result<TaskRecord> {
    let path = record_path(state_dir, task_id);
    if !path.exists() {
        bail!(
            "unknown task {task_id:?}: no record at {} (was it started with this --state-dir?)",
            path.display()
        );
    }
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let record: TaskRecord = serde_json::from_str(&text)
        .with_context(|| format!("corrupt task record {}", path.display()))?;
    Ok(record)
}

/// Builds a fresh record for a task started now.
pub fn new_record(task_id: String, config: TaskConfig) -> TaskRecord {
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    TaskRecord { task_id, service: config.service.clone(), started_unix, config }
}

/// Picks the task id: the configured one, or `<service>-<unix>-<pid>`.
pub fn task_id_for(config: &TaskConfig) -> String {
    config.task_id.clone().unwrap_or_else(|| {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("{}-{}-{}", config.service, now, std::process::id())
    })
}
