//! Task configuration files: JSON schema, defaults, and validation.
//!
//! A configuration describes one profiling task: the service it belongs to,
//! the fleet of agent targets to drive, the sampling parameters every agent
//! receives, and the aggregation cadence. Validation errors carry the path of
//! the offending field (for example `targets[1].instance_id`) so a bad file
//! can be fixed without guesswork.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use atys_core::fda::FdaConfig;
use atys_core::kernel::{KernelSpec, ProcessDescriptor};
use atys_core::wire::TaskSpec;
use serde::{Deserialize, Serialize};

/// A configuration file failed to parse or validate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted path of the offending field, e.g. `targets[1].instance_id`.
    /// Empty when the document as a whole is malformed.
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { path: path.into(), reason: reason.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "invalid config: {}", self.reason)
        } else {
            write!(f, "invalid config: {}: {}", self.path, self.reason)
        }
    }
}

impl std::error::Error for ConfigError {}

/// One agent endpoint the controller drives, plus what to profile there.
///
/// Exactly one of `process` / `kernel` may be omitted, not both: with only a
/// `process` the agent picks a kernel from the process description; an
/// explicit `kernel` overrides detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub host: String,
    pub command_port: u16,
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
}

/// Sampling parameters shared by every target of a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub initial_frequency_hz: f64,
    pub window_seconds: f64,
    pub fsp_percentile: f64,
    pub top_k: usize,
    pub fda: FdaConfig,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            initial_frequency_hz: 1000.0,
            window_seconds: 10.0,
            fsp_percentile: 99.0,
            top_k: 10,
            fda: FdaConfig::default(),
        }
    }
}

/// How pulled profiles are combined into the global view.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Recommended pull cadence for cron-driven aggregation, in windows.
    pub pull_every_n_windows: u32,
    /// Merge instances in groups of this size before the final merge.
    /// `None` merges everything in one pass; the result is identical either
    /// way, grouping only bounds peak memory on very large fleets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { pull_every_n_windows: 6, group_size: None }
    }
}

/// A complete task configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Stable identifier for the task; generated from the service name and a
    /// timestamp when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    pub service: String,
    pub targets: Vec<TargetConfig>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
}

fn name_ok(value: &str) -> bool {
    !value.is_empty()
        && !value.contains(['/', '\\'])
        && !value.chars().any(|c| c.is_control())
}

impl TaskConfig {
    /// Parses and validates a configuration document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: TaskConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses, and validates a configuration file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| {
            ConfigError::new("", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    /// Checks every field and reports the first violation with its path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(id) = &self.task_id {
            if !name_ok(id) {
                return Err(ConfigError::new(
                    "task_id",
                    "must be non-empty without path separators or control characters",
                ));
            }
        }
        if !name_ok(&self.service) {
            return Err(ConfigError::new(
                "service",
                "must be non-empty without path separators or control characters",
            ));
        }
        if self.targets.is_empty() {
            return Err(ConfigError::new("targets", "at least one target is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, target) in self.targets.iter().enumerate() {
            let at = |field: &str| format!("targets[{i}].{field}");
            if target.host.is_empty() {
                return Err(ConfigError::new(at("host"), "must be non-empty"));
            }
            if target.command_port == 0 {
                return Err(ConfigError::new(at("command_port"), "must be nonzero"));
            }
            if !name_ok(&target.instance_id) {
                return Err(ConfigError::new(
                    at("instance_id"),
                    "must be non-empty without path separators or control characters",
                ));
            }
            if !seen.insert(target.instance_id.clone()) {
                return Err(ConfigError::new(
                    at("instance_id"),
                    format!("duplicate instance id {:?}", target.instance_id),
                ));
            }
            if target.process.is_none() && target.kernel.is_none() {
                return Err(ConfigError::new(
                    format!("targets[{i}]"),
                    "needs a process description or an explicit kernel",
                ));
            }
        }
        let s = &self.sampling;
        if !(s.initial_frequency_hz.is_finite() && s.initial_frequency_hz > 0.0) {
            return Err(ConfigError::new(
                "sampling.initial_frequency_hz",
                "must be a positive finite number",
            ));
        }
        if !(s.window_seconds.is_finite() && s.window_seconds > 0.0) {
            return Err(ConfigError::new(
                "sampling.window_seconds",
                "must be a positive finite number",
            ));
        }
        if !(s.fsp_percentile.is_finite() && s.fsp_percentile > 0.0 && s.fsp_percentile <= 100.0) {
            return Err(ConfigError::new(
                "sampling.fsp_percentile",
                "must lie in (0, 100]",
            ));
        }
        if s.top_k == 0 {
            return Err(ConfigError::new("sampling.top_k", "must be at least 1"));
        }
        let fda = &s.fda;
        if !(fda.theta.is_finite() && fda.theta > 0.0 && fda.theta < 1.0) {
            return Err(ConfigError::new("sampling.fda.theta", "must lie in (0, 1)"));
        }
        if !(fda.lambda.is_finite() && fda.lambda > 0.0 && fda.lambda < 1.0) {
            return Err(ConfigError::new("sampling.fda.lambda", "must lie in (0, 1)"));
        }
        if fda.k == 0 {
            return Err(ConfigError::new("sampling.fda.k", "must be at least 1"));
        }
        if !(fda.f_min_hz.is_finite() && fda.f_min_hz > 0.0) {
            return Err(ConfigError::new(
                "sampling.fda.f_min_hz",
                "must be a positive finite number",
            ));
        }
        if !(fda.f_max_hz.is_finite() && fda.f_max_hz >= fda.f_min_hz) {
            return Err(ConfigError::new(
                "sampling.fda.f_max_hz",
                "must be finite and at least f_min_hz",
            ));
        }
        if !(s.initial_frequency_hz >= fda.f_min_hz && s.initial_frequency_hz <= fda.f_max_hz) {
            return Err(ConfigError::new(
                "sampling.initial_frequency_hz",
                "must lie within [f_min_hz, f_max_hz]",
            ));
        }
        if self.aggregation.pull_every_n_windows == 0 {
            return Err(ConfigError::new(
                "aggregation.pull_every_n_windows",
                "must be at least 1",
            ));
        }
        if let Some(g) = self.aggregation.group_size {
            if g < 2 {
                return Err(ConfigError::new(
                    "aggregation.group_size",
                    "must be at least 2 when set",
                ));
            }
        }
        Ok(())
    }

    /// Builds the per-agent task specification for one target.
    pub fn task_spec_for(&self, target: &TargetConfig) -> TaskSpec {
        let kernel = target.kernel.clone().unwrap_or_else(|| {
            let process = target
                .process
                .as_ref()
                .expect("validated: target has process or kernel");
            let kind = atys_core::kernel::select_kernel(
                atys_core::kernel::detect_language(process),
                None,
            );
            match kind {
                atys_core::kernel::KernelKind::Jvm => KernelSpec::Jvm { command: None },
                atys_core::kernel::KernelKind::Python => KernelSpec::Python { command: None },
                _ => KernelSpec::System { command: None },
            }
        });
        TaskSpec {
            service: self.service.clone(),
            instance: target.instance_id.clone(),
            kernel,
            process: target.process.clone(),
            initial_frequency_hz: self.sampling.initial_frequency_hz,
            window_seconds: self.sampling.window_seconds,
            fsp_percentile: self.sampling.fsp_percentile,
            top_k: self.sampling.top_k,
            fda: self.sampling.fda.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "service": "checkout",
            "targets": [
                {"host": "127.0.0.1", "command_port": 7071, "instance_id": "node-1",
                 "process": {"id": "4242", "executable_name": "java"}}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let config = TaskConfig::from_json(&minimal()).unwrap();
        assert_eq!(config.sampling.initial_frequency_hz, 1000.0);
        assert_eq!(config.sampling.window_seconds, 10.0);
        assert_eq!(config.sampling.fsp_percentile, 99.0);
        assert_eq!(config.sampling.top_k, 10);
        assert_eq!(config.sampling.fda.theta, 0.5);
        assert_eq!(config.aggregation.pull_every_n_windows, 6);
        assert_eq!(config.aggregation.group_size, None);
        assert!(config.task_id.is_none());
    }

    #[test]
    fn duplicate_instance_ids_name_the_offending_entry() {
        let text = r#"{
            "service": "checkout",
            "targets": [
                {"host": "a", "command_port": 1, "instance_id": "n",
                 "process": {"id": "1", "executable_name": "java"}},
                {"host": "b", "command_port": 1, "instance_id": "n",
                 "process": {"id": "2", "executable_name": "java"}}
            ]
        }"#;
        let err = TaskConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "targets[1].instance_id");
        assert!(err.reason.contains("duplicate"));
    }

    #[test]
    fn out_of_range_decay_is_rejected_with_its_path() {
        let text = r#"{
            "service": "s",
            "targets": [{"host": "h", "command_port": 1, "instance_id": "i",
                         "process": {"id": "1", "executable_name": "java"}}],
            "sampling": {"fda": {"lambda": 1.0}}
        }"#;
        let err = TaskConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "sampling.fda.lambda");
    }

    #[test]
    fn theta_must_stay_below_one() {
        let text = r#"{
            "service": "s",
            "targets": [{"host": "h", "command_port": 1, "instance_id": "i",
                         "process": {"id": "1", "executable_name": "java"}}],
            "sampling": {"fda": {"theta": 1.5}}
        }"#;
        let err = TaskConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "sampling.fda.theta");
    }

    #[test]
    fn target_without_process_or_kernel_is_rejected() {
        let text = r#"{
            "service": "s",
            "targets": [{"host": "h", "command_port": 1, "instance_id": "i"}]
        }"#;
        let err = TaskConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "targets[0]");
    }

    #[test]
    fn unknown_fields_fail_the_parse() {
        let text = r#"{"service": "s", "targets": [], "surprise": 1}"#;
        let err = TaskConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "");
        assert!(err.reason.contains("surprise"));
    }

    #[test]
    fn initial_frequency_must_respect_the_band() {
        let text = r#"{
            "service": "s",
            "targets": [{"host": "h", "command_port": 1, "instance_id": "i",
                         "process": {"id": "1", "executable_name": "java"}}],
            "sampling": {"initial_frequency_hz": 5.0}
        }"#;
        let err = TaskConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "sampling.initial_frequency_hz");
    }

    #[test]
    fn task_spec_inherits_sampling_and_detects_kernel() {
        let config = TaskConfig::from_json(&minimal()).unwrap();
        let spec = config.task_spec_for(&config.targets[0]);
        assert_eq!(spec.service, "checkout");
        assert_eq!(spec.instance, "node-1");
        assert!(matches!(spec.kernel, KernelSpec::Jvm { .. }));
        assert_eq!(spec.initial_frequency_hz, 1000.0);
        spec.validate().unwrap();
    }

    #[test]
    fn explicit_kernel_overrides_detection() {
        let text = r#"{
            "service": "s",
            "targets": [{"host": "h", "command_port": 1, "instance_id": "i",
                         "process": {"id": "1", "executable_name": "java"},
                         "kernel": {"kind": "system", "command": "perf {pid}"}}]
        }"#;
        let config = TaskConfig::from_json(text).unwrap();
        let spec = config.task_spec_for(&config.targets[0]);
        assert!(matches!(spec.kernel, KernelSpec::System { .. }));
    }
}
