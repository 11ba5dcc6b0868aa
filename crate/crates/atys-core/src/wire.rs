//! Wire protocol between the controller and agents: newline-delimited JSON
//! over TCP. Every request carries a shared token; every response is an
//! envelope `{"ok": true, ...}` or `{"ok": false, "error": {code, message}}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fda::FdaConfig;
use crate::kernel::{KernelSpec, ProcessDescriptor};

pub mod error_codes {
    pub const UNAUTHORIZED: &str = "UNAUTHORIZED";
    pub const UNKNOWN_TASK: &str = "UNKNOWN_TASK";
    pub const DUPLICATE_TASK_ID: &str = "DUPLICATE_TASK_ID";
    pub const BAD_CONFIG: &str = "BAD_CONFIG";
    pub const INVALID_STATE: &str = "INVALID_STATE";
    pub const INTERNAL: &str = "INTERNAL";
}

/// One command line sent to an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Request {
    #[serde(rename = "START")]
    Start { task_id: String, config: Box<TaskSpec>, token: String },
    #[serde(rename = "STOP")]
    Stop { task_id: String, token: String },
    /// Without a task id, reports every task on the agent.
    #[serde(rename = "STATUS")]
    Status {
        #[serde(default)]
        task_id: Option<String>,
        token: String,
    },
    #[serde(rename = "PULL_FLAMEGRAPH")]
    PullFlamegraph { task_id: String, token: String },
}

impl Request {
    pub fn token(&self) -> &str {
        match self {
            Request::Start { token, .. }
            | Request::Stop { token, .. }
            | Request::Status { token, .. }
            | Request::PullFlamegraph { token, .. } => token,
        }
    }
}

fn default_frequency() -> f64 {
    1000.0
}
fn default_window() -> f64 {
    10.0
}
fn default_percentile() -> f64 {
    99.0
}
fn default_top_k() -> usize {
    10
}

/// Everything an agent needs to run one profiling task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub service: String,
    pub instance: String,
    pub kernel: KernelSpec,
    /// Target process, for kernels whose command templates reference it.
    #[serde(default)]
    pub process: Option<ProcessDescriptor>,
    #[serde(default = "default_frequency")]
    pub initial_frequency_hz: f64,
    #[serde(default = "default_window")]
    pub window_seconds: f64,
    /// Sample-coverage percentile retained by thread pruning.
    #[serde(default = "default_percentile")]
    pub fsp_percentile: f64,
    /// Hotspot functions exported as metric series.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub fda: FdaConfig,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), String> {
        fn name_ok(kind: &str, value: &str) -> Result<(), String> {
            if value.is_empty() {
                return Err(format!("{kind} must not be empty"));
            }
            if value.contains(['/', '\\']) || value.chars().any(|c| c.is_control()) {
                return Err(format!(
                    "{kind} {value:?} must not contain path separators or control characters"
                ));
            }
            Ok(())
        }
        name_ok("service", &self.service)?;
        name_ok("instance", &self.instance)?;
        if !(self.initial_frequency_hz.is_finite() && self.initial_frequency_hz > 0.0) {
            return Err(format!(
                "initial_frequency_hz must be positive, got {}",
                self.initial_frequency_hz
            ));
        }
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(format!("window_seconds must be positive, got {}", self.window_seconds));
        }
        if !(self.fsp_percentile.is_finite()
            && self.fsp_percentile > 0.0
            && self.fsp_percentile <= 100.0)
        {
            return Err(format!(
                "fsp_percentile must lie in (0, 100], got {}",
                self.fsp_percentile
            ));
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".to_string());
        }
        self.fda.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Task lifecycle as reported over the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Starting,
    Running,
    Stopping,
    Stopped,
    Failed,
}

/// One row of a STATUS response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusEntry {
    pub task_id: String,
    pub state: TaskState,
    pub windows_completed: u64,
    pub frequency_hz: f64,
    /// Failure reason when state is Failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Payload of a PULL_FLAMEGRAPH response: the latest cumulative local
/// flamegraph in folded form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullPayload {
    pub task_id: String,
    pub service: String,
    pub instance: String,
    pub windows_completed: u64,
    pub total_samples: u64,
    pub folded: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed wire message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("{code}: {message}")]
    Agent { code: String, message: String },
}

/// Builds a success envelope, merging `payload`'s fields beside `"ok": true`.
pub fn ok_envelope(payload: serde_json::Value) -> String {
    let mut object = serde_json::Map::new();
    object.insert("ok".to_string(), serde_json::Value::Bool(true));
    if let serde_json::Value::Object(fields) = payload {
        object.extend(fields);
    }
    serde_json::Value::Object(object).to_string()
}

/// Builds a failure envelope with a structured error body.
pub fn error_envelope(code: &str, message: impl std::fmt::Display) -> String {
    serde_json::json!({
        "ok": false,
        "error": { "code": code, "message": message.to_string() },
    })
    .to_string()
}

/// Parses a response line; agent-signalled failures become
/// [`WireError::Agent`].
pub fn decode_response(line: &str) -> Result<serde_json::Value, WireError> {
    let value: serde_json::Value = serde_json::from_str(line)?;
    if value.get("ok").and_then(serde_json::Value::as_bool) == Some(true) {
        return Ok(value);
    }
    let body: ErrorBody = value
        .get("error")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .unwrap_or_else(|| ErrorBody {
            code: error_codes::INTERNAL.to_string(),
            message: "response carried no error body".to_string(),
        });
    Err(WireError::Agent { code: body.code, message: body.message })
}
