//! Sampling kernels: the pluggable back ends that actually produce folded
//! profiles, one window at a time.
//!
//! A kernel is selected per target process — JVM and Python processes get
//! language-specific external profilers, everything else a system-level one —
//! and driven through a uniform lifecycle: start at a frequency, poll a
//! profile per window, retune the frequency at window boundaries, stop with a
//! final flush. Two additional kernels exist for testing and load studies:
//! a replay kernel that paces a recorded folded corpus, and a synthetic
//! kernel that draws samples from a weighted call tree.

mod exec;
mod replay;
mod synthetic;

pub use exec::ExecKernel;
pub use replay::ReplayKernel;
pub use synthetic::{CallTreeNode, Phase, SyntheticKernel, SyntheticWorkloadConfig};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{FoldedProfile, ProfileError, ProfileMeta};

#[derive(Debug, Error)]
pub enum KernelError {
    /// The external profiling command exited abnormally; no profile is
    /// produced for the window.
    #[error("profiling command exited abnormally: {detail}")]
    KernelExited { detail: String },
    /// The kernel produced output that does not parse as folded stacks.
    #[error("kernel produced malformed output: {source}")]
    MalformedKernelOutput {
        #[from]
        source: ProfileError,
    },
    /// Launching the external command failed.
    #[error("failed to spawn profiling command: {0}")]
    SpawnFailed(#[from] std::io::Error),
    /// A kernel configuration that cannot be started.
    #[error("invalid kernel config: {0}")]
    InvalidConfig(String),
    /// Lifecycle misuse, e.g. polling after stop.
    #[error("kernel already stopped")]
    Stopped,
}

/// What is known about a target process before attaching to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessDescriptor {
    /// Process id (or an opaque handle for descriptors built in tests).
    pub id: String,
    pub executable_name: String,
    /// A loaded interpreter library, e.g. `libjvm.so` or `libpython3.10.so`.
    #[serde(default)]
    pub interpreter_hint: Option<String>,
}

/// Runtime family a process belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanguageKind {
    Java,
    Python,
    Compiled,
}

/// True when `name` is `token` optionally followed by a version suffix
/// (`python3.10`), but not a longer word (`javac`).
fn matches_token(name: &str, token: &str) -> bool {
    match name.strip_prefix(token) {
        None => false,
        Some(rest) => rest.chars().next().is_none_or(|c| !c.is_ascii_alphabetic()),
    }
}

/// Classifies a process by executable name and interpreter hint.
pub fn detect_language(process: &ProcessDescriptor) -> LanguageKind {
    let exe = process
        .executable_name
        .rsplit('/')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    let hint = process
        .interpreter_hint
        .as_deref()
        .unwrap_or("")
        .to_ascii_lowercase();
    if matches_token(&exe, "java") || hint.contains("jvm") {
        LanguageKind::Java
    } else if matches_token(&exe, "python") || hint.contains("python") {
        LanguageKind::Python
    } else {
        LanguageKind::Compiled
    }
}

/// The kernel families a task can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Jvm,
    Python,
    System,
    Replay,
    Synthetic,
    Exec,
}

/// Picks the kernel for a detected language. An explicit override always
/// wins; otherwise JVMs get the JVM kernel, Python interpreters the Python
/// kernel and everything else the system kernel.
pub fn select_kernel(language: LanguageKind, override_kind: Option<KernelKind>) -> KernelKind {
    if let Some(kind) = override_kind {
        return kind;
    }
    match language {
        LanguageKind::Java => KernelKind::Jvm,
        LanguageKind::Python => KernelKind::Python,
        LanguageKind::Compiled => KernelKind::System,
    }
}

/// Deployment-default command templates for the externally backed kernels.
/// `{pid}`, `{frequency}` (rounded to whole Hz) and `{duration}` (window
/// seconds) are substituted before the command runs under `sh -c`. Real
/// installations typically override these per fleet.
pub fn default_command_template(kind: KernelKind) -> Option<&'static str> {
    match kind {
        KernelKind::Jvm => Some(
            "asprof collect -e cpu -d {duration} -i $((1000000000 / {frequency})) \
             -o collapsed -f /dev/stdout {pid}",
        ),
        KernelKind::Python => Some(
            "py-spy record --pid {pid} --rate {frequency} --duration {duration} \
             --format raw --output /dev/stdout",
        ),
        KernelKind::System => Some(
            "perf record -q -F {frequency} -g -p {pid} -o - -- sleep {duration} \
             | perf script -i - | stackcollapse-perf.pl",
        ),
        _ => None,
    }
}

/// Declarative kernel selection carried in task configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Replays a recorded folded corpus, paced by the sampling frequency.
    Replay {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        inline: Option<String>,
        #[serde(default)]
        thread_aware: bool,
    },
    /// Draws samples from a seeded weighted call tree.
    Synthetic { workload: SyntheticWorkloadConfig },
    /// Runs an arbitrary command per window; it must print folded stacks.
    Exec {
        command: String,
        #[serde(default)]
        thread_aware: bool,
    },
    /// Language kernels: external profilers behind [`Exec`](Self::Exec)
    /// semantics, with overridable command templates.
    Jvm {
        #[serde(default)]
        command: Option<String>,
    },
    Python {
        #[serde(default)]
        command: Option<String>,
    },
    System {
        #[serde(default)]
        command: Option<String>,
    },
}

/// Identity and window geometry shared by every profile a kernel emits.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelContext {
    pub service: String,
    pub instance: String,
    pub window_seconds: f64,
    /// Target process, required by the externally backed kernels.
    pub process: Option<ProcessDescriptor>,
}

/// Implemented by each kernel back end. `collect` closes the elapsed window
/// (described by `meta`) and begins the next one at `next_frequency_hz`;
/// `drain` closes the final window without starting another.
pub(crate) trait KernelBackend: Send {
    fn collect(
        &mut self,
        meta: &ProfileMeta,
        next_frequency_hz: f64,
    ) -> Result<FoldedProfile, KernelError>;

    fn drain(&mut self, meta: &ProfileMeta) -> Result<FoldedProfile, KernelError>;
}

/// A started kernel. Frequency changes are quantized to window boundaries:
/// [`set_frequency`](Self::set_frequency) affects the window after the next
/// [`poll_window`](Self::poll_window).
pub struct KernelHandle {
    backend: Box<dyn KernelBackend>,
    context: KernelContext,
    current_frequency_hz: f64,
    pending_frequency_hz: f64,
    window_index: u64,
    stopped: bool,
}

impl KernelHandle {
    /// Frequency in force for the window currently being captured.
    pub fn current_frequency_hz(&self) -> f64 {
        self.current_frequency_hz
    }

    /// Index the next polled window will carry.
    pub fn window_index(&self) -> u64 {
        self.window_index
    }

    /// Requests a new sampling frequency from the next window boundary on.
    pub fn set_frequency(&mut self, frequency_hz: f64) {
        self.pending_frequency_hz = frequency_hz;
    }

    fn window_meta(&self) -> ProfileMeta {
        ProfileMeta {
            service: self.context.service.clone(),
            instance: self.context.instance.clone(),
            frequency_hz: self.current_frequency_hz,
            window_seconds: self.context.window_seconds,
            window_index: self.window_index,
        }
    }

    /// Returns the profile accumulated since the previous poll, stamped with
    /// the frequency that was in force during that window.
    pub fn poll_window(&mut self) -> Result<FoldedProfile, KernelError> {
        if self.stopped {
            return Err(KernelError::Stopped);
        }
        let meta = self.window_meta();
        let profile = self.backend.collect(&meta, self.pending_frequency_hz)?;
        self.window_index += 1;
        self.current_frequency_hz = self.pending_frequency_hz;
        Ok(profile)
    }

    /// Stops the kernel, flushing whatever it still holds as a final window.
    pub fn stop(&mut self) -> Result<FoldedProfile, KernelError> {
        if self.stopped {
            return Err(KernelError::Stopped);
        }
        let meta = self.window_meta();
        let profile = self.backend.drain(&meta)?;
        self.window_index += 1;
        self.stopped = true;
        Ok(profile)
    }
}

/// Resolves a kernel spec and starts it at `frequency_hz`.
pub fn kernel_start(
    spec: &KernelSpec,
    context: KernelContext,
    frequency_hz: f64,
) -> Result<KernelHandle, KernelError> {
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return Err(KernelError::InvalidConfig(format!(
            "initial frequency must be positive, got {frequency_hz}"
        )));
    }
    if !(context.window_seconds.is_finite() && context.window_seconds > 0.0) {
        return Err(KernelError::InvalidConfig(format!(
            "window seconds must be positive, got {}",
            context.window_seconds
        )));
    }

    let backend: Box<dyn KernelBackend> = match spec {
        KernelSpec::Replay { path, inline, thread_aware } => {
            let text = match (path, inline) {
                (Some(path), None) => std::fs::read_to_string(path)?,
                (None, Some(inline)) => inline.clone(),
                _ => {
                    return Err(KernelError::InvalidConfig(
                        "replay kernel needs exactly one of `path` or `inline`".to_string(),
                    ))
                }
            };
            Box::new(ReplayKernel::from_folded(&text, *thread_aware)?)
        }
        KernelSpec::Synthetic { workload } => Box::new(SyntheticKernel::new(workload.clone())?),
        KernelSpec::Exec { command, thread_aware } => Box::new(ExecKernel::start(
            command,
            *thread_aware,
            context.process.as_ref(),
            frequency_hz,
            context.window_seconds,
        )?),
        KernelSpec::Jvm { command } | KernelSpec::Python { command } | KernelSpec::System { command } => {
            let kind = match spec {
                KernelSpec::Jvm { .. } => KernelKind::Jvm,
                KernelSpec::Python { .. } => KernelKind::Python,
                _ => KernelKind::System,
            };
            let template = command.clone().unwrap_or_else(|| {
                default_command_template(kind).expect("language kernels have templates").to_string()
            });
            Box::new(ExecKernel::start(
                &template,
                // External collapsed output is conventionally per-thread only
                // when asked; the defaults produce process-wide stacks.
                false,
                context.process.as_ref(),
                frequency_hz,
                context.window_seconds,
            )?)
        }
    };

    Ok(KernelHandle {
        backend,
        current_frequency_hz: frequency_hz,
        pending_frequency_hz: frequency_hz,
        window_index: 0,
        stopped: false,
        context,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn descriptor(exe: &str, hint: Option<&str>) -> ProcessDescriptor {
        ProcessDescriptor {
            id: "4242".to_string(),
            executable_name: exe.to_string(),
            interpreter_hint: hint.map(str::to_string),
        }
    }

    #[test]
    fn detects_languages_from_executable_names() {
        assert_eq!(detect_language(&descriptor("java", None)), LanguageKind::Java);
        assert_eq!(detect_language(&descriptor("python3.10", None)), LanguageKind::Python);
        assert_eq!(detect_language(&descriptor("python", None)), LanguageKind::Python);
        assert_eq!(detect_language(&descriptor("nginx", None)), LanguageKind::Compiled);
        assert_eq!(detect_language(&descriptor("/usr/bin/java", None)), LanguageKind::Java);
        // A longer word is not a version suffix.
        assert_eq!(detect_language(&descriptor("javascript", None)), LanguageKind::Compiled);
    }

    #[test]
    fn detects_languages_from_interpreter_hints() {
        assert_eq!(
            detect_language(&descriptor("app", Some("libjvm.so"))),
            LanguageKind::Java
        );
        assert_eq!(
            detect_language(&descriptor("app", Some("libpython3.11.so"))),
            LanguageKind::Python
        );
    }

    #[test]
    fn select_kernel_maps_languages_and_honors_override() {
        assert_eq!(select_kernel(LanguageKind::Java, None), KernelKind::Jvm);
        assert_eq!(select_kernel(LanguageKind::Python, None), KernelKind::Python);
        assert_eq!(select_kernel(LanguageKind::Compiled, None), KernelKind::System);
        assert_eq!(
            select_kernel(LanguageKind::Java, Some(KernelKind::Synthetic)),
            KernelKind::Synthetic
        );
    }

    #[test]
    fn language_kernels_have_default_templates() {
        for kind in [KernelKind::Jvm, KernelKind::Python, KernelKind::System] {
            let template = default_command_template(kind).unwrap();
            assert!(template.contains("{frequency}"), "{kind:?}");
            assert!(template.contains("{duration}"), "{kind:?}");
            assert!(template.contains("{pid}"), "{kind:?}");
        }
        assert!(default_command_template(KernelKind::Replay).is_none());
    }

    #[test]
    fn kernel_spec_round_trips_through_json() {
        let spec = KernelSpec::Replay {
            path: None,
            inline: Some("a;b 1\n".to_string()),
            thread_aware: true,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains(r#""kind":"replay""#));
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn kernel_start_validates_geometry() {
        let spec = KernelSpec::Replay {
            path: None,
            inline: Some("a 1\n".to_string()),
            thread_aware: false,
        };
        let context = KernelContext {
            service: "svc".to_string(),
            instance: "i1".to_string(),
            window_seconds: 0.0,
            process: None,
        };
        assert!(matches!(
            kernel_start(&spec, context.clone(), 100.0),
            Err(KernelError::InvalidConfig(_))
        ));
        let context = KernelContext { window_seconds: 1.0, ..context };
        assert!(matches!(
            kernel_start(&spec, context, -1.0),
            Err(KernelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn replay_spec_requires_exactly_one_source() {
        let context = KernelContext {
            service: "svc".to_string(),
            instance: "i1".to_string(),
            window_seconds: 1.0,
            process: None,
        };
        let spec = KernelSpec::Replay { path: None, inline: None, thread_aware: false };
        assert!(matches!(
            kernel_start(&spec, context, 100.0),
            Err(KernelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn frequency_changes_apply_at_the_next_window_boundary() {
        let spec = KernelSpec::Replay {
            path: None,
            inline: Some("a;b 1000\n".to_string()),
            thread_aware: false,
        };
        let context = KernelContext {
            service: "svc".to_string(),
            instance: "i1".to_string(),
            window_seconds: 1.0,
            process: None,
        };
        let mut handle = kernel_start(&spec, context, 100.0).unwrap();
        handle.set_frequency(50.0);
        // The window already in flight still runs at 100 Hz.
        let w0 = handle.poll_window().unwrap();
        assert_eq!(w0.meta.frequency_hz, 100.0);
        assert_eq!(w0.meta.window_index, 0);
        assert_eq!(w0.total_samples(), 100);
        let w1 = handle.poll_window().unwrap();
        assert_eq!(w1.meta.frequency_hz, 50.0);
        assert_eq!(w1.meta.window_index, 1);
        assert_eq!(w1.total_samples(), 50);
    }

    #[test]
    fn stopped_kernels_reject_further_polls() {
        let spec = KernelSpec::Replay {
            path: None,
            inline: Some("a 10\n".to_string()),
            thread_aware: false,
        };
        let context = KernelContext {
            service: "svc".to_string(),
            instance: "i1".to_string(),
            window_seconds: 1.0,
            process: None,
        };
        let mut handle = kernel_start(&spec, context, 5.0).unwrap();
        handle.stop().unwrap();
        assert!(matches!(handle.poll_window(), Err(KernelError::Stopped)));
        assert!(matches!(handle.stop(), Err(KernelError::Stopped)));
    }
}
