//! The per-node profiling agent: owns a table of profiling tasks, serves
//! the newline-JSON command port and the HTTP metrics endpoint, and writes
//! flamegraph artifacts under its data directory.

pub mod metrics;
pub mod task;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use atys_core::wire::{
    error_codes, error_envelope, ok_envelope, PullPayload, Request, StatusEntry, TaskState,
};

use task::{spawn_task, TaskRuntime, TaskSnapshot};

struct Inner {
    token: String,
    data_dir: PathBuf,
    tasks: Mutex<BTreeMap<String, Arc<TaskRuntime>>>,
}

/// One agent instance; cheap to clone and share across server threads.
#[derive(Clone)]
pub struct Agent {
    inner: Arc<Inner>,
}

impl Agent {
    pub fn new(token: impl Into<String>, data_dir: impl Into<PathBuf>) -> Agent {
        Agent {
            inner: Arc::new(Inner {
                token: token.into(),
                data_dir: data_dir.into(),
                tasks: Mutex::new(BTreeMap::new()),
            }),
        }
    }

    /// Stops every live task; used on shutdown.
    pub fn stop_all(&self) {
        let tasks: Vec<Arc<TaskRuntime>> =
            self.inner.tasks.lock().expect("task table").values().cloned().collect();
        for task in tasks {
            let _ = task.stop_and_join();
        }
    }

    fn snapshots(&self) -> Vec<Arc<TaskSnapshot>> {
        self.inner
            .tasks
            .lock()
            .expect("task table")
            .values()
            .map(|t| t.snapshot())
            .collect()
    }

    /// Renders the metrics document from the current snapshots.
    pub fn render_metrics(&self) -> String {
        metrics::render(&self.snapshots())
    }

    /// Full command dispatch for one request line; always returns exactly
    /// one response line (without the trailing newline).
    pub fn handle_request_line(&self, line: &str) -> String {
        let request: Request = match serde_json::from_str(line) {
            Ok(request) => request,
            Err(e) => {
                return error_envelope(error_codes::BAD_CONFIG, format!("malformed request: {e}"))
            }
        };
        if request.token() != self.inner.token {
            return error_envelope(error_codes::UNAUTHORIZED, "token mismatch");
        }
        match request {
            Request::Start { task_id, config, .. } => self.start(task_id, *config),
            Request::Stop { task_id, .. } => self.stop(&task_id),
            Request::Status { task_id, .. } => self.status(task_id.as_deref()),
            Request::PullFlamegraph { task_id, .. } => self.pull(&task_id),
        }
    }

    fn start(&self, task_id: String, config: atys_core::wire::TaskSpec) -> String {
        if task_id.is_empty() || task_id.contains(['/', '\\']) {
            return error_envelope(
                error_codes::BAD_CONFIG,
                format!("task_id {task_id:?} must be a non-empty path-safe string"),
            );
        }
        let mut tasks = self.inner.tasks.lock().expect("task table");
        if tasks.contains_key(&task_id) {
            return error_envelope(
                error_codes::DUPLICATE_TASK_ID,
                format!("task {task_id:?} already exists on this agent"),
            );
        }
        match spawn_task(&task_id, config, self.inner.data_dir.clone()) {
            Ok(runtime) => {
                tasks.insert(task_id.clone(), runtime);
                ok_envelope(serde_json::json!({"task_id": task_id, "state": TaskState::Running}))
            }
            Err(reason) => error_envelope(error_codes::BAD_CONFIG, reason),
        }
    }

    fn stop(&self, task_id: &str) -> String {
        let Some(runtime) = self.lookup(task_id) else {
            return error_envelope(error_codes::UNKNOWN_TASK, format!("no task {task_id:?}"));
        };
        let before = runtime.snapshot();
        match before.state {
            TaskState::Stopped | TaskState::Failed => {
                return error_envelope(
                    error_codes::INVALID_STATE,
                    format!("task {task_id:?} is already {:?}", before.state),
                );
            }
            TaskState::Starting | TaskState::Running | TaskState::Stopping => {}
        }
        let after = runtime.stop_and_join();
        match after.state {
            TaskState::Stopped => ok_envelope(serde_json::json!({
                "task_id": task_id,
                "state": after.state,
                "windows_completed": after.windows_completed,
                "total_samples": after.total_samples,
            })),
            _ => error_envelope(
                error_codes::INVALID_STATE,
                format!(
                    "task {task_id:?} ended {:?}{}",
                    after.state,
                    after
                        .failure
                        .as_deref()
                        .map(|m| format!(": {m}"))
                        .unwrap_or_default()
                ),
            ),
        }
    }

    fn status(&self, task_id: Option<&str>) -> String {
        let snapshots: Vec<Arc<TaskSnapshot>> = match task_id {
            Some(id) => match self.lookup(id) {
                Some(runtime) => vec![runtime.snapshot()],
                None => {
                    return error_envelope(error_codes::UNKNOWN_TASK, format!("no task {id:?}"))
                }
            },
            None => self.snapshots(),
        };
        let entries: Vec<StatusEntry> = snapshots
            .iter()
            .map(|s| StatusEntry {
                task_id: s.task_id.clone(),
                state: s.state,
                windows_completed: s.windows_completed,
                frequency_hz: s.frequency_hz,
                message: s.failure.clone(),
            })
            .collect();
        ok_envelope(serde_json::json!({ "tasks": entries }))
    }

    fn pull(&self, task_id: &str) -> String {
        let Some(runtime) = self.lookup(task_id) else {
            return error_envelope(error_codes::UNKNOWN_TASK, format!("no task {task_id:?}"));
        };
        let snapshot = runtime.snapshot();
        let payload = PullPayload {
            task_id: snapshot.task_id.clone(),
            service: snapshot.service.clone(),
            instance: snapshot.instance.clone(),
            windows_completed: snapshot.windows_completed,
            total_samples: snapshot.total_samples,
            folded: snapshot.folded.clone(),
        };
        ok_envelope(serde_json::to_value(payload).expect("payload serializes"))
    }

    fn lookup(&self, task_id: &str) -> Option<Arc<TaskRuntime>> {
        self.inner.tasks.lock().expect("task table").get(task_id).cloned()
    }
}

/// A served agent: both listeners bound (port 0 picks free ports) with
/// their accept loops running on background threads.
pub struct RunningAgent {
    pub agent: Agent,
    pub command_addr: SocketAddr,
    pub metrics_addr: SocketAddr,
}

pub fn serve(agent: Agent, command_port: u16, metrics_port: u16) -> std::io::Result<RunningAgent> {
    let command = TcpListener::bind(("127.0.0.1", command_port))?;
    let metrics = TcpListener::bind(("127.0.0.1", metrics_port))?;
    let command_addr = command.local_addr()?;
    let metrics_addr = metrics.local_addr()?;

    {
        let agent = agent.clone();
        std::thread::spawn(move || {
            for stream in command.incoming().flatten() {
                let agent = agent.clone();
                std::thread::spawn(move || serve_commands(agent, stream));
            }
        });
    }
    {
        let agent = agent.clone();
        std::thread::spawn(move || {
            for stream in metrics.incoming().flatten() {
                let agent = agent.clone();
                std::thread::spawn(move || serve_metrics(agent, stream));
            }
        });
    }

    Ok(RunningAgent { agent, command_addr, metrics_addr })
}

/// One command connection: newline-delimited JSON requests, one response
/// line each. Blank lines are ignored; the connection closes at EOF.
fn serve_commands(agent: Agent, stream: TcpStream) {
    let mut writer = match stream.try_clone() {
        Ok(writer) => writer,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let response = agent.handle_request_line(&line);
        if writer
            .write_all(response.as_bytes())
            .and_then(|()| writer.write_all(b"\n"))
            .and_then(|()| writer.flush())
            .is_err()
        {
            return;
        }
    }
}

/// Minimal HTTP/1.1 handler: `GET /metrics` yields the exposition document,
/// anything else a 404. One request per connection.
fn serve_metrics(agent: Agent, mut stream: TcpStream) {
    let request_line = match read_request_line(&mut stream) {
        Some(line) => line,
        None => return,
    };
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let path = parts.next().unwrap_or("");

    let (status, body) = if method == "GET" && path == "/metrics" {
        ("200 OK", agent.render_metrics())
    } else {
        ("404 Not Found", "not found\n".to_string())
    };
    let response = format!(
        "HTTP/1.1 {status}\r\nContent-Type: text/plain; version=0.0.4; charset=utf-8\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

/// Reads up to the end of the request head and returns its first line.
fn read_request_line(stream: &mut TcpStream) -> Option<String> {
    let mut head = Vec::new();
    let mut byte = [0u8; 1];
    while !head.ends_with(b"\r\n\r\n") && head.len() < 16 * 1024 {
        match stream.read(&mut byte) {
            Ok(1) => head.push(byte[0]),
            _ => break,
        }
    }
    let head = String::from_utf8_lossy(&head);
    head.lines().next().map(str::to_string)
}
