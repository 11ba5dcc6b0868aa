//! Exec kernel: runs an external profiling command once per window and
//! parses its stdout as folded stacks. The language kernels are thin
//! template presets over this machinery.

use std::io::Read;
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;

use crate::profile::{parse_folded, FoldedProfile, ProfileMeta};

use super::{KernelBackend, KernelError, ProcessDescriptor};

/// Substitutes `{pid}`, `{frequency}` (rounded to whole Hz, at least 1) and
/// `{duration}` (seconds, integral values without a trailing `.0`) into a
/// command template.
pub fn render_command(
    template: &str,
    pid: Option<&str>,
    frequency_hz: f64,
    duration_seconds: f64,
) -> String {
    let frequency = frequency_hz.round().max(1.0) as u64;
    let duration = if duration_seconds.fract() == 0.0 && duration_seconds >= 0.0 {
        format!("{}", duration_seconds as u64)
    } else {
        format!("{duration_seconds}")
    };
    template
        .replace("{pid}", pid.unwrap_or(""))
        .replace("{frequency}", &frequency.to_string())
        .replace("{duration}", &duration)
}

struct RunningCommand {
    child: Child,
    stdout: JoinHandle<std::io::Result<String>>,
    stderr: JoinHandle<std::io::Result<String>>,
}

fn drain_pipe<R: Read + Send + 'static>(pipe: Option<R>) -> JoinHandle<std::io::Result<String>> {
    std::thread::spawn(move || {
        let mut text = String::new();
        if let Some(mut pipe) = pipe {
            pipe.read_to_string(&mut text)?;
        }
        Ok(text)
    })
}

/// Runs a templated command under `sh -c` for each window; the command is
/// respawned at every boundary with the frequency then in force, so retuning
/// takes effect exactly one window later.
pub struct ExecKernel {
    template: String,
    thread_aware: bool,
    pid: Option<String>,
    window_seconds: f64,
    running: Option<RunningCommand>,
}

impl ExecKernel {
    pub(crate) fn start(
        template: &str,
        thread_aware: bool,
        process: Option<&ProcessDescriptor>,
        frequency_hz: f64,
        window_seconds: f64,
    ) -> Result<Self, KernelError> {
        let pid = process.map(|p| p.id.clone());
        if template.contains("{pid}") && pid.is_none() {
            return Err(KernelError::InvalidConfig(
                "command template references {pid} but the task has no target process".to_string(),
            ));
        }
        let mut kernel = Self {
            template: template.to_string(),
            thread_aware,
            pid,
            window_seconds,
            running: None,
        };
        kernel.spawn(frequency_hz)?;
        Ok(kernel)
    }

    fn spawn(&mut self, frequency_hz: f64) -> Result<(), KernelError> {
        let command =
            render_command(&self.template, self.pid.as_deref(), frequency_hz, self.window_seconds);
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdout = drain_pipe(child.stdout.take());
        let stderr = drain_pipe(child.stderr.take());
        self.running = Some(RunningCommand { child, stdout, stderr });
        Ok(())
    }

    /// Waits for the in-flight command and returns its stdout.
    fn reap(&mut self) -> Result<String, KernelError> {
        let mut running = self.running.take().ok_or(KernelError::Stopped)?;
        let stdout = running.stdout.join().expect("stdout reader panicked")?;
        let stderr = running.stderr.join().expect("stderr reader panicked")?;
        let status = running.child.wait()?;
        if !status.success() {
            return Err(KernelError::KernelExited {
                detail: format!("{status}; stderr: {}", stderr.trim()),
            });
        }
        Ok(stdout)
    }
}

impl Drop for ExecKernel {
    fn drop(&mut self) {
        if let Some(mut running) = self.running.take() {
            let _ = running.child.kill();
            let _ = running.child.wait();
        }
    }
}

impl KernelBackend for ExecKernel {
    fn collect(
        &mut self,
        meta: &ProfileMeta,
        next_frequency_hz: f64,
    ) -> Result<FoldedProfile, KernelError> {
        let output = self.reap()?;
        let profile = parse_folded(&output, self.thread_aware, meta.clone())?;
        self.spawn(next_frequency_hz)?;
        Ok(profile)
    }

    fn drain(&mut self, meta: &ProfileMeta) -> Result<FoldedProfile, KernelError> {
        let output = self.reap()?;
        Ok(parse_folded(&output, self.thread_aware, meta.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(frequency_hz: f64, window_index: u64) -> ProfileMeta {
        ProfileMeta {
            service: "svc".to_string(),
            instance: "i1".to_string(),
            frequency_hz,
            window_seconds: 1.0,
            window_index,
        }
    }

    fn descriptor(id: &str) -> ProcessDescriptor {
        ProcessDescriptor {
            id: id.to_string(),
            executable_name: "app".to_string(),
            interpreter_hint: None,
        }
    }

    #[test]
    fn render_substitutes_all_tokens() {
        let rendered = render_command(
            "prof -p {pid} -F {frequency} -d {duration}",
            Some("4242"),
            99.6,
            10.0,
        );
        assert_eq!(rendered, "prof -p 4242 -F 100 -d 10");
        // Fractional windows keep their fraction; low frequencies clamp to 1.
        assert_eq!(render_command("{frequency}/{duration}", None, 0.2, 0.5), "1/0.5");
    }

    #[test]
    fn collect_parses_stdout_and_respawns_at_the_new_frequency() {
        let mut kernel = ExecKernel::start(
            "printf 'alpha;beta {frequency}\\n'",
            false,
            None,
            7.0,
            1.0,
        )
        .unwrap();
        let w0 = kernel.collect(&meta(7.0, 0), 3.0).unwrap();
        assert_eq!(w0.total_samples(), 7);
        let record = &w0.records()[0];
        assert_eq!(record.path.leaf().as_str(), "beta");
        // The respawned command saw the retuned frequency.
        let w1 = kernel.drain(&meta(3.0, 1)).unwrap();
        assert_eq!(w1.total_samples(), 3);
    }

    #[test]
    fn pid_token_is_substituted_from_the_descriptor() {
        let descriptor = descriptor("908");
        let mut kernel =
            ExecKernel::start("printf 'p{pid};f 2\\n'", true, Some(&descriptor), 10.0, 1.0)
                .unwrap();
        let window = kernel.drain(&meta(10.0, 0)).unwrap();
        assert_eq!(window.records()[0].thread, "p908");
    }

    #[test]
    fn missing_process_for_pid_template_is_rejected() {
        let err = match ExecKernel::start("prof {pid}", false, None, 10.0, 1.0) {
            Err(err) => err,
            Ok(_) => panic!("expected start to fail"),
        };
        assert!(matches!(err, KernelError::InvalidConfig(_)));
    }

    #[test]
    fn nonzero_exit_reports_kernel_exited_with_stderr() {
        let mut kernel =
            ExecKernel::start("echo boom >&2; exit 3", false, None, 10.0, 1.0).unwrap();
        let err = kernel.drain(&meta(10.0, 0)).unwrap_err();
        match err {
            KernelError::KernelExited { detail } => {
                assert!(detail.contains("boom"), "{detail}");
                assert!(detail.contains('3'), "{detail}");
            }
            other => panic!("expected KernelExited, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_output_reports_malformed_kernel_output() {
        let mut kernel =
            ExecKernel::start("printf 'no-count-here\\n'", false, None, 10.0, 1.0).unwrap();
        let err = kernel.drain(&meta(10.0, 0)).unwrap_err();
        assert!(matches!(err, KernelError::MalformedKernelOutput { .. }), "{err:?}");
    }

    #[test]
    fn empty_output_is_an_empty_window() {
        let mut kernel = ExecKernel::start("true", false, None, 10.0, 1.0).unwrap();
        let window = kernel.drain(&meta(10.0, 0)).unwrap();
        assert!(window.is_empty());
    }
}
