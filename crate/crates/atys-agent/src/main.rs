//! `atys-agent` binary: serves the command and metrics endpoints until
//! terminated.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

#[derive(Parser)]
#[command(name = "atys-agent", about = "Per-node hotspot profiling agent")]
struct Args {
    /// TCP port for newline-JSON controller commands.
    #[arg(long, default_value_t = 7071)]
    command_port: u16,
    /// HTTP port exposing GET /metrics.
    #[arg(long, default_value_t = 7070)]
    metrics_port: u16,
    /// Shared secret; every command must carry it.
    #[arg(long, env = "ATYS_TOKEN")]
    token: String,
    /// Directory for flamegraph artifacts (one subdirectory per task).
    #[arg(long, default_value = "atys-data")]
    data_dir: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    std::fs::create_dir_all(&args.data_dir)
        .with_context(|| format!("cannot create data dir {}", args.data_dir.display()))?;

    let agent = atys_agent::Agent::new(args.token, args.data_dir);
    let running = atys_agent::serve(agent, args.command_port, args.metrics_port)
        .context("cannot bind agent ports")?;
    eprintln!(
        "agent ready: commands on {}, metrics on http://{}/metrics",
        running.command_addr, running.metrics_addr
    );

    // Serve until the process is terminated.
    loop {
        std::thread::park();
    }
}
