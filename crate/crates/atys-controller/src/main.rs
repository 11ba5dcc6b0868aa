//! `atys` — fleet profiling controller CLI.
//!
//! Exit codes: 0 on success (including partial fleet success), 1 when an
//! operation failed on every target or produced no result, 2 on
//! configuration or usage errors.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use atys_controller::config::{ConfigError, TaskConfig};
use atys_controller::ops::{self, FleetReport};

#[derive(Parser)]
#[command(name = "atys", version, about = "Distributed hotspot profiling controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Shared secret sent with every agent request.
    #[arg(long, env = "ATYS_TOKEN", default_value = "")]
    token: String,
    /// Directory holding one record per started task.
    #[arg(long, default_value = "atys-state")]
    state_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Start a profiling task on every target in a config file.
    Start {
        /// Task configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stop a running task on every target.
    Stop {
        /// Task id as printed by start.
        #[arg(long)]
        task: String,
        #[command(flatten)]
        common: Common,
    },
    /// Report per-target task status.
    Status {
        #[arg(long)]
        task: String,
        #[command(flatten)]
        common: Common,
    },
    /// Pull every target's profile and write the merged global flamegraph.
    Aggregate {
        #[arg(long)]
        task: String,
        /// Merge in groups of this size instead of one flat pass.
        #[arg(long)]
        group_size: Option<usize>,
        /// Output directory for the global artifacts and report.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit calibration models from a pruning sweep CSV.
    Calibrate {
        /// CSV with columns p,time_seconds,mape_percent.
        #[arg(long)]
        samples: PathBuf,
        /// Error budget: largest acceptable hotspot error, in percent.
        #[arg(long)]
        epsilon: f64,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_fleet(action: &str, report: &FleetReport) {
    println!("task {}: {action} on {}/{} targets", report.task_id, report.succeeded(), report.outcomes.len());
    for outcome in &report.outcomes {
        match (&outcome.response, &outcome.error) {
            (Some(body), _) => println!("  {} ({}): ok {body}", outcome.instance_id, outcome.endpoint),
            (None, Some(error)) => println!("  {} ({}): FAILED: {error}", outcome.instance_id, outcome.endpoint),
            (None, None) => unreachable!("outcome has a response or an error"),
        }
    }
}

fn fleet_exit(report: &FleetReport) -> ExitCode {
    if report.all_failed() {
        eprintln!("error: every target failed");
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run() -> Result<ExitCode, anyhow::Error> {
    match Cli::parse().command {
        Command::Start { config, common } => {
            let config = match TaskConfig::from_file(&config) {
                Ok(c) => c,
                Err(e @ ConfigError { .. }) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let report = ops::start(config, &common.token, &common.state_dir)?;
            print_fleet("started", &report);
            Ok(fleet_exit(&report))
        }
        Command::Stop { task, common } => {
            let report = ops::stop(&task, &common.token, &common.state_dir)?;
            print_fleet("stopped", &report);
            Ok(fleet_exit(&report))
        }
        Command::Status { task, common } => {
            let report = ops::status(&task, &common.token, &common.state_dir)?;
            print_fleet("status", &report);
            Ok(fleet_exit(&report))
        }
        Command::Aggregate { task, group_size, out, common } => {
            match ops::aggregate(&task, &common.token, &common.state_dir, group_size, &out) {
                Ok(output) => {
                    let report = &output.report;
                    let delivered =
                        report.instances.iter().filter(|i| i.error.is_none()).count();
                    println!(
                        "task {}: merged {}/{} instances, {} samples, {} functions -> {}",
                        report.task_id,
                        delivered,
                        report.instances.len(),
                        report.global.total_samples,
                        report.global.distinct_functions,
                        out.display()
                    );
                    for instance in report.instances.iter().filter(|i| i.error.is_some()) {
                        println!(
                            "  {} ({}): FAILED: {}",
                            instance.instance_id,
                            instance.endpoint,
                            instance.error.as_deref().unwrap_or("unknown")
                        );
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Calibrate { samples, epsilon, out } => {
            let text = fs::read_to_string(&samples)
                .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", samples.display()))?;
            let report = ops::calibrate(&text, epsilon)?;
            let body = serde_json::to_string_pretty(&report)?;
            println!("{body}");
            if let Some(path) = out {
                fs::write(&path, &body)
                    .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
            }
            Ok(if report.recommended_percentile.is_some() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
