//! The per-task window loop: poll the kernel, prune threads, accumulate
//! totals, retune the sampling frequency, publish flamegraph files and an
//! atomically swapped metrics snapshot.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use atys_core::fda::{next_frequency, FrequencyState};
use atys_core::flamegraph::{build, emit_folded, emit_json, merge, Flamegraph};
use atys_core::fsp::prune;
use atys_core::kernel::{kernel_start, KernelContext, KernelHandle};
use atys_core::profile::{cpu_time_seconds, function_totals, hotspot_distribution, FoldedProfile};
use atys_core::wire::{TaskSpec, TaskState};

/// Exported metric values for one hotspot function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSeries {
    pub function: String,
    /// Cumulative post-pruning self samples.
    pub samples_total: u64,
    /// Cumulative CPU time, each window converted at its stamped frequency.
    pub cpu_seconds_total: f64,
    /// Share in the latest window's hotspot distribution.
    pub share: f64,
}

/// Immutable view of one task, replaced wholesale at window boundaries so
/// concurrent scrapes never observe a half-updated window.
#[derive(Debug, Clone)]
pub struct TaskSnapshot {
    pub task_id: String,
    pub service: String,
    pub instance: String,
    pub state: TaskState,
    pub failure: Option<String>,
    pub windows_completed: u64,
    /// Frequency in force for the window being captured next.
    pub frequency_hz: f64,
    /// Divergence measured at the latest non-empty window.
    pub last_divergence: Option<f64>,
    /// Threads discarded by pruning in the latest non-empty window.
    pub pruned_threads: Option<u64>,
    /// At most `top_k` series: the latest window's hotspot functions.
    pub functions: Vec<FunctionSeries>,
    /// Cumulative post-pruning samples across all windows.
    pub total_samples: u64,
    /// Cumulative local flamegraph, folded form (thread frames stripped).
    pub folded: String,
}

/// A started task: the loop thread plus the snapshot it publishes.
pub struct TaskRuntime {
    snapshot: Mutex<Arc<TaskSnapshot>>,
    stop: SyncSender<()>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl TaskRuntime {
    pub fn snapshot(&self) -> Arc<TaskSnapshot> {
        self.snapshot.lock().expect("snapshot lock").clone()
    }

    /// Signals the loop to stop and waits for it to finish its final flush.
    /// Returns the final snapshot.
    pub fn stop_and_join(&self) -> Arc<TaskSnapshot> {
        let _ = self.stop.try_send(());
        if let Some(handle) = self.thread.lock().expect("thread lock").take() {
            let _ = handle.join();
        }
        self.snapshot()
    }
}

/// Validates the task, starts the kernel and launches the window loop.
/// Errors are configuration problems; once this returns, the task is
/// Running and later trouble surfaces as the Failed state.
pub fn spawn_task(
    task_id: &str,
    spec: TaskSpec,
    data_dir: PathBuf,
) -> Result<Arc<TaskRuntime>, String> {
    spec.validate()?;
    let task_dir = data_dir.join(task_id);
    std::fs::create_dir_all(&task_dir)
        .map_err(|e| format!("cannot create task data dir {}: {e}", task_dir.display()))?;

    let context = KernelContext {
        service: spec.service.clone(),
        instance: spec.instance.clone(),
        window_seconds: spec.window_seconds,
        process: spec.process.clone(),
    };
    let kernel = kernel_start(&spec.kernel, context, spec.initial_frequency_hz)
        .map_err(|e| e.to_string())?;

    let initial = TaskSnapshot {
        task_id: task_id.to_string(),
        service: spec.service.clone(),
        instance: spec.instance.clone(),
        state: TaskState::Starting,
        failure: None,
        windows_completed: 0,
        frequency_hz: spec.initial_frequency_hz,
        last_divergence: None,
        pruned_threads: None,
        functions: Vec::new(),
        total_samples: 0,
        folded: String::new(),
    };

    let (stop, stop_rx) = std::sync::mpsc::sync_channel(1);
    let runtime = Arc::new(TaskRuntime {
        snapshot: Mutex::new(Arc::new(initial)),
        stop,
        thread: Mutex::new(None),
    });

    let initial_frequency_hz = spec.initial_frequency_hz;
    let mut executor = WindowLoop {
        runtime: runtime.clone(),
        spec,
        task_dir,
        kernel,
        fda_state: None,
        graph: None,
        counters: BTreeMap::new(),
        total_samples: 0,
        windows_completed: 0,
        last_divergence: None,
        pruned_threads: None,
        next_frequency_hz: initial_frequency_hz,
    };

    let handle = std::thread::spawn(move || executor.run(stop_rx));
    *runtime.thread.lock().expect("thread lock") = Some(handle);
    Ok(runtime)
}

struct WindowLoop {
    runtime: Arc<TaskRuntime>,
    spec: TaskSpec,
    task_dir: PathBuf,
    kernel: KernelHandle,
    fda_state: Option<FrequencyState>,
    graph: Option<Flamegraph>,
    /// function → (self samples, cpu seconds), cumulative post-pruning.
    counters: BTreeMap<String, (u64, f64)>,
    total_samples: u64,
    windows_completed: u64,
    last_divergence: Option<f64>,
    pruned_threads: Option<u64>,
    /// Frequency in force for the next window (post-retune).
    next_frequency_hz: f64,
}

impl WindowLoop {
    fn run(&mut self, stop: Receiver<()>) {
        self.publish(TaskState::Running, None, Vec::new());
        let window = Duration::from_secs_f64(self.spec.window_seconds);
        loop {
            let stopping = !matches!(stop.recv_timeout(window), Err(RecvTimeoutError::Timeout));
            if stopping {
                self.publish_keep_functions(TaskState::Stopping);
                match self.kernel.stop() {
                    Ok(flush) => {
                        if let Err(reason) = self.absorb(flush, false) {
                            self.fail(reason);
                            return;
                        }
                        self.publish_keep_functions(TaskState::Stopped);
                    }
                    Err(e) => self.fail(format!("final flush failed: {e}")),
                }
                return;
            }
            match self.kernel.poll_window() {
                Ok(profile) => {
                    if let Err(reason) = self.absorb(profile, true) {
                        self.fail(reason);
                        return;
                    }
                }
                Err(e) => {
                    self.fail(format!("kernel poll failed: {e}"));
                    return;
                }
            }
        }
    }

    /// Runs the window pipeline over one polled profile. `retune` is false
    /// for the final stop-flush, which has no following window to retune.
    fn absorb(&mut self, window: FoldedProfile, retune: bool) -> Result<(), String> {
        self.windows_completed += 1;
        if window.is_empty() {
            // An idle window carries no distribution: retuning on it would
            // read as a spurious maximal shift, so only the counter moves.
            self.publish_keep_functions(TaskState::Running);
            return Ok(());
        }

        let (kept, report) =
            prune(&window, self.spec.fsp_percentile).map_err(|e| e.to_string())?;
        let totals = function_totals(&kept);
        for (name, counts) in &totals.entries {
            let entry = self.counters.entry(name.clone()).or_insert((0, 0.0));
            entry.0 += counts.self_samples;
            entry.1 += cpu_time_seconds(counts.self_samples, window.meta.frequency_hz)
                .map_err(|e| e.to_string())?;
        }
        self.total_samples += kept.total_samples();
        self.pruned_threads = Some(report.discarded_threads as u64);

        let hotspots =
            hotspot_distribution(&totals, self.spec.top_k, window.meta.window_index);
        if retune {
            let state = self
                .fda_state
                .take()
                .unwrap_or_else(|| FrequencyState::new(self.spec.initial_frequency_hz));
            let step = next_frequency(&state, &hotspots, &self.spec.fda);
            self.kernel.set_frequency(step.next_frequency_hz);
            self.next_frequency_hz = step.next_frequency_hz;
            self.last_divergence = Some(step.divergence);
            self.fda_state = Some(step.state);
        }

        // Thread frames are node-local; strip them from published graphs so
        // cross-instance aggregation merges by function.
        let window_graph = build(&kept, false);
        let mut graph = match self.graph.take() {
            None => window_graph,
            Some(existing) => merge(&existing, &window_graph),
        };
        graph.meta.instances_merged = 1;
        self.write_artifacts(&graph, window.meta.window_index)?;
        self.graph = Some(graph);

        let functions = hotspots
            .shares
            .iter()
            .map(|(name, share)| {
                let (samples, seconds) = self.counters.get(name).copied().unwrap_or((0, 0.0));
                FunctionSeries {
                    function: name.clone(),
                    samples_total: samples,
                    cpu_seconds_total: seconds,
                    share: *share,
                }
            })
            .collect();
        self.publish(TaskState::Running, None, functions);
        Ok(())
    }

    fn write_artifacts(&self, graph: &Flamegraph, window_index: u64) -> Result<(), String> {
        let stem = format!("{}_{}_local", self.spec.service, window_index);
        for (extension, payload) in
            [("folded", emit_folded(graph)), ("json", emit_json(graph))]
        {
            let path = self.task_dir.join(format!("{stem}.{extension}"));
            let tmp = self.task_dir.join(format!(".{stem}.{extension}.tmp"));
            std::fs::write(&tmp, payload)
                .and_then(|()| std::fs::rename(&tmp, &path))
                .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        }
        Ok(())
    }

    fn fail(&mut self, reason: String) {
        let current = self.runtime.snapshot();
        let functions = current.functions.clone();
        self.publish(TaskState::Failed, Some(reason), functions);
    }

    /// Publishes a state change without recomputing the exported series.
    fn publish_keep_functions(&self, state: TaskState) {
        let functions = self.runtime.snapshot().functions.clone();
        self.publish(state, None, functions);
    }

    fn publish(&self, state: TaskState, failure: Option<String>, functions: Vec<FunctionSeries>) {
        let previous = self.runtime.snapshot();
        let snapshot = TaskSnapshot {
            task_id: previous.task_id.clone(),
            service: previous.service.clone(),
            instance: previous.instance.clone(),
            state,
            failure: failure.or_else(|| previous.failure.clone()),
            windows_completed: self.windows_completed,
            frequency_hz: self.next_frequency_hz,
            last_divergence: self.last_divergence,
            pruned_threads: self.pruned_threads,
            functions,
            total_samples: self.total_samples,
            folded: self.graph.as_ref().map(emit_folded).unwrap_or_default(),
        };
        *self.runtime.snapshot.lock().expect("snapshot lock") = Arc::new(snapshot);
    }
}
