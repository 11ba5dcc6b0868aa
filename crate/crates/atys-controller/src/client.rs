//! Agent RPC client and bounded fan-out across a fleet.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use atys_core::wire::{self, Request, WireError};
use serde_json::Value;
use thiserror::Error;

/// At most this many agent connections are in flight at once.
pub const MAX_FANOUT: usize = 64;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);
const IO_TIMEOUT: Duration = Duration::from_secs(30);

/// One agent request failed.
#[derive(Debug, Error)]
pub enum AgentCallError {
    /// The agent could not be reached or the connection broke.
    #[error("cannot reach {endpoint}: {detail}")]
    Unreachable { endpoint: String, detail: String },
    /// The agent answered with an error envelope.
    #[error("agent error {code}: {message}")]
    Agent { code: String, message: String },
    /// The agent answered with something that is not a response envelope.
    #[error("malformed agent response: {0}")]
    Protocol(String),
}

impl AgentCallError {
    /// Error code when the agent rejected the request, if it did.
    pub fn agent_code(&self) -> Option<&str> {
        match self {
            AgentCallError::Agent { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// An open command connection to one agent.
///
/// Requests are newline-delimited JSON; every request yields exactly one
/// response line, so one connection can serve several calls in sequence.
pub struct AgentClient {
    endpoint: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl AgentClient {
    /// Connects to `host:port` with connect and I/O timeouts.
    pub fn connect(host: &str, port: u16) -> Result<Self, AgentCallError> {
        let endpoint = format!("{host}:{port}");
        let unreachable = |detail: String| AgentCallError::Unreachable {
            endpoint: format!("{host}:{port}"),
            detail,
        };
        let addr = (host, port)
            .to_socket_addrs()
            .map_err(|e| unreachable(e.to_string()))?
            .next()
            .ok_or_else(|| unreachable("no address resolved".into()))?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT)
            .map_err(|e| unreachable(e.to_string()))?;
        stream
            .set_read_timeout(Some(IO_TIMEOUT))
            .and_then(|_| stream.set_write_timeout(Some(IO_TIMEOUT)))
            .map_err(|e| unreachable(e.to_string()))?;
        let writer = stream.try_clone().map_err(|e| unreachable(e.to_string()))?;
        Ok(Self { endpoint, reader: BufReader::new(stream), writer })
    }

    /// Sends one request and decodes the agent's one-line answer.
    pub fn call(&mut self, request: &Request) -> Result<Value, AgentCallError> {
        let unreachable = |detail: String| AgentCallError::Unreachable {
            endpoint: self.endpoint.clone(),
            detail,
        };
        let line = serde_json::to_string(request)
            .map_err(|e| AgentCallError::Protocol(e.to_string()))?;
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .map_err(|e| unreachable(e.to_string()))?;
        let mut response = String::new();
        let n = self
            .reader
            .read_line(&mut response)
            .map_err(|e| unreachable(e.to_string()))?;
        if n == 0 {
            return Err(AgentCallError::Unreachable {
                endpoint: self.endpoint.clone(),
                detail: "connection closed before a response arrived".into(),
            });
        }
        wire::decode_response(&response).map_err(|e| match e {
            WireError::Agent { code, message } => AgentCallError::Agent { code, message },
            WireError::Malformed(detail) => AgentCallError::Protocol(detail.to_string()),
        })
    }
}

/// Connects, issues one request, and hangs up.
pub fn call_once(host: &str, port: u16, request: &Request) -> Result<Value, AgentCallError> {
    AgentClient::connect(host, port)?.call(request)
}

/// Runs `job` over every item with at most `limit` worker threads.
///
/// Results come back in input order; one slow or dead target never blocks the
/// others beyond the connection timeout.
pub fn fan_out<I, O, F>(items: &[I], limit: usize, job: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let workers = limit.clamp(1, MAX_FANOUT).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<O>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *results[i].lock().unwrap() = Some(job(item));
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}
