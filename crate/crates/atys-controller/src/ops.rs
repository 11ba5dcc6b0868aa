//! Controller operations: task lifecycle across a fleet and global
//! aggregation of pulled profiles.
//!
//! Every fleet-wide operation degrades per target: one unreachable or failing
//! agent is reported alongside the successes and only a fleet where *every*
//! target failed counts as an operation failure.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use atys_core::calibration::{
    fit_linear, fit_log, parse_sweep_csv, solve_min_p, CalibrationError, LinearModel, LogModel,
};
use atys_core::flamegraph::{build, emit_folded, emit_json, hierarchical_aggregate, merge_all};
use atys_core::profile::{function_totals, parse_folded, ProfileMeta};
use atys_core::wire::{PullPayload, Request, StatusEntry};
use serde::Serialize;
use serde_json::Value;

use crate::client::{call_once, fan_out, AgentCallError, AgentClient, MAX_FANOUT};
use crate::config::{TargetConfig, TaskConfig};
use crate::state::{self, TaskRecord};

/// Result of one agent call within a fleet operation.
#[derive(Debug, Serialize)]
pub struct TargetOutcome {
    pub instance_id: String,
    pub endpoint: String,
    /// Agent response body on success.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    /// Failure description when the call did not succeed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TargetOutcome {
    fn new(target: &TargetConfig, result: Result<Value, AgentCallError>) -> Self {
        let endpoint = format!("{}:{}", target.host, target.command_port);
        match result {
            Ok(value) => Self {
                instance_id: target.instance_id.clone(),
                endpoint,
                response: Some(value),
                error: None,
            },
            Err(e) => Self {
                instance_id: target.instance_id.clone(),
                endpoint,
                response: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Outcome of a fleet-wide request (start/stop/status).
#[derive(Debug, Serialize)]
pub struct FleetReport {
    pub task_id: String,
    pub outcomes: Vec<TargetOutcome>,
}

impl FleetReport {
    pub fn succeeded(&self) -> usize {
        self.outcomes.iter().filter(|o| o.ok()).count()
    }

    /// True when not a single target answered successfully.
    pub fn all_failed(&self) -> bool {
        self.succeeded() == 0
    }
}

fn broadcast<F>(record: &TaskRecord, request_for: F) -> FleetReport
where
    F: Fn(&TargetConfig) -> Request + Sync,
{
    let outcomes = fan_out(&record.config.targets, MAX_FANOUT, |target| {
        let result = call_once(&target.host, target.command_port, &request_for(target));
        TargetOutcome::new(target, result)
    });
    FleetReport { task_id: record.task_id.clone(), outcomes }
}

/// Starts the task on every target and persists the task record.
///
/// The record is saved before the fan-out so a partially started task is
/// always addressable by `stop` later.
pub fn start(config: TaskConfig, token: &str, state_dir: &Path) -> Result<FleetReport> {
    let task_id = state::task_id_for(&config);
    let record = state::new_record(task_id, config);
    state::save(state_dir, &record)?;
    let report = broadcast(&record, |target| Request::Start {
        task_id: record.task_id.clone(),
        config: Box::new(record.config.task_spec_for(target)),
        token: token.to_string(),
    });
    Ok(report)
}

/// Stops the task on every target.
pub fn stop(task_id: &str, token: &str, state_dir: &Path) -> Result<FleetReport> {
    let record = state::load(state_dir, task_id)?;
    Ok(broadcast(&record, |_| Request::Stop {
        task_id: task_id.to_string(),
        token: token.to_string(),
    }))
}

/// Collects per-target status rows for the task.
pub fn status(task_id: &str, token: &str, state_dir: &Path) -> Result<FleetReport> {
    let record = state::load(state_dir, task_id)?;
    Ok(broadcast(&record, |_| Request::Status {
        task_id: Some(task_id.to_string()),
        token: token.to_string(),
    }))
}

/// One function row in an aggregation report.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionShare {
    pub function: String,
    pub self_samples: u64,
    /// Share of all self samples in the profile it was computed from.
    pub share: f64,
}

/// Per-instance section of an aggregation report.
#[derive(Debug, Serialize)]
pub struct InstanceSummary {
    pub instance_id: String,
    pub endpoint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows_completed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_samples: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub top_functions: Vec<FunctionShare>,
}

/// Fleet-wide section of an aggregation report.
#[derive(Debug, Serialize)]
pub struct GlobalSummary {
    pub instances_merged: u64,
    pub total_samples: u64,
    pub distinct_functions: usize,
    pub top_functions: Vec<FunctionShare>,
}

/// The aggregation report written next to the global flamegraph.
#[derive(Debug, Serialize)]
pub struct AggregateReport {
    pub task_id: String,
    pub service: String,
    pub generated_unix: u64,
    pub instances: Vec<InstanceSummary>,
    pub global: GlobalSummary,
}

/// Folded text of the merged global graph plus its report.
#[derive(Debug)]
pub struct AggregateOutput {
    pub report: AggregateReport,
    pub global_folded: String,
    pub global_json: String,
}

fn top_functions(folded: &str, service: &str, instance: &str, k: usize) -> Vec<FunctionShare> {
    let Ok(profile) = parse_folded(folded, false, ProfileMeta::synthetic(service, instance)) else {
        return Vec::new();
    };
    let totals = function_totals(&profile);
    let total = totals.total_self_samples();
    let mut ranked: Vec<(&String, u64)> = totals
        .entries
        .iter()
        .map(|(name, c)| (name, c.self_samples))
        .filter(|&(_, s)| s > 0)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    ranked
        .into_iter()
        .map(|(name, s)| FunctionShare {
            function: name.clone(),
            self_samples: s,
            share: s as f64 / total as f64,
        })
        .collect()
}

fn write_atomic(dir: &Path, name: &str, body: &str) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let path = dir.join(name);
    fs::write(&tmp, body).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("cannot rename to {}", path.display()))?;
    Ok(())
}

/// Pulls the cumulative flamegraph from every target, merges the successes
/// into the global graph, and writes `<service>_global.folded`,
/// `<service>_global.json`, and `report.json` into `out_dir`.
///
/// Fails only when configuration is unusable or when *no* target delivered a
/// profile; individual failures are recorded in the report.
pub fn aggregate(
    task_id: &str,
    token: &str,
    state_dir: &Path,
    group_size: Option<usize>,
    out_dir: &Path,
) -> Result<AggregateOutput> {
    let record = state::load(state_dir, task_id)?;
    let group_size = group_size.or(record.config.aggregation.group_size);
    if let Some(g) = group_size {
        if g < 2 {
            bail!("group size must be at least 2, got {g}");
        }
    }
    let service = record.service.clone();
    let top_k = record.config.sampling.top_k;

    type PullResult = Result<(PullPayload, Option<StatusEntry>), AgentCallError>;
    let pulls: Vec<PullResult> = fan_out(&record.config.targets, MAX_FANOUT, |target| {
        let mut client = AgentClient::connect(&target.host, target.command_port)?;
        let pull = client.call(&Request::PullFlamegraph {
            task_id: task_id.to_string(),
            token: token.to_string(),
        })?;
        let payload: PullPayload = serde_json::from_value(pull)
            .map_err(|e| AgentCallError::Protocol(format!("bad pull payload: {e}")))?;
        // Status is best-effort garnish on the same connection; its failure
        // must not discard a successfully pulled profile.
        let entry = client
            .call(&Request::Status { task_id: Some(task_id.to_string()), token: token.to_string() })
            .ok()
            .and_then(|v| v.get("tasks").cloned())
            .and_then(|tasks| serde_json::from_value::<Vec<StatusEntry>>(tasks).ok())
            .and_then(|mut tasks| (!tasks.is_empty()).then(|| tasks.remove(0)));
        Ok((payload, entry))
    });

    let mut instances = Vec::new();
    let mut graphs = Vec::new();
    for (target, pull) in record.config.targets.iter().zip(pulls) {
        let endpoint = format!("{}:{}", target.host, target.command_port);
        match pull {
            Ok((payload, entry)) => {
                let profile = parse_folded(
                    &payload.folded,
                    false,
                    ProfileMeta::synthetic(&service, &payload.instance),
                )
                .with_context(|| {
                    format!("instance {} sent unparseable folded text", target.instance_id)
                })?;
                instances.push(InstanceSummary {
                    instance_id: target.instance_id.clone(),
                    endpoint,
                    error: None,
                    state: entry.as_ref().map(|e| format!("{:?}", e.state)),
                    frequency_hz: entry.as_ref().map(|e| e.frequency_hz),
                    windows_completed: Some(payload.windows_completed),
                    total_samples: Some(payload.total_samples),
                    top_functions: top_functions(
                        &payload.folded,
                        &service,
                        &target.instance_id,
                        top_k,
                    ),
                });
                graphs.push(build(&profile, false));
            }
            Err(e) => instances.push(InstanceSummary {
                instance_id: target.instance_id.clone(),
                endpoint,
                error: Some(e.to_string()),
                state: None,
                frequency_hz: None,
                windows_completed: None,
                total_samples: None,
                top_functions: Vec::new(),
            }),
        }
    }

    if graphs.is_empty() {
        bail!("no data: none of the {} targets delivered a profile", instances.len());
    }

    let global = match group_size {
        Some(g) => hierarchical_aggregate(&graphs, g)?,
        None => merge_all(&graphs)?,
    };
    let global_folded = emit_folded(&global);
    let global_json = emit_json(&global);
    let global_summary = GlobalSummary {
        instances_merged: global.meta.instances_merged,
        total_samples: global.total(),
        distinct_functions: {
            let profile =
                parse_folded(&global_folded, false, ProfileMeta::synthetic(&service, "global"))?;
            function_totals(&profile).entries.len()
        },
        top_functions: top_functions(&global_folded, &service, "global", top_k),
    };

    let report = AggregateReport {
        task_id: task_id.to_string(),
        service: service.clone(),
        generated_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        instances,
        global: global_summary,
    };

    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output dir {}", out_dir.display()))?;
    write_atomic(out_dir, &format!("{service}_global.folded"), &global_folded)?;
    write_atomic(out_dir, &format!("{service}_global.json"), &global_json)?;
    write_atomic(out_dir, "report.json", &serde_json::to_string_pretty(&report)?)?;

    Ok(AggregateOutput { report, global_folded, global_json })
}

/// Outcome of fitting the calibration sweep and solving for the retention
/// floor.
#[derive(Debug, Serialize)]
pub struct CalibrationReport {
    pub samples: usize,
    pub time_model: LinearModel,
    pub error_model: LogModel,
    pub epsilon: f64,
    /// Smallest retention percentile whose predicted error stays within
    /// epsilon; absent when the budget is unreachable even at p = 100.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recommended_percentile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible_reason: Option<String>,
    /// Predicted aggregation time at the recommended percentile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_time_seconds: Option<f64>,
}

/// Fits both calibration models from a sweep CSV and recommends the smallest
/// retention percentile meeting the error budget `epsilon`.
pub fn calibrate(csv_text: &str, epsilon: f64) -> Result<CalibrationReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        bail!("epsilon must be a positive finite percentage, got {epsilon}");
    }
    let samples = parse_sweep_csv(csv_text)?;
    let time_points: Vec<(f64, f64)> = samples.iter().map(|s| (s.p, s.time_seconds)).collect();
    let error_points: Vec<(f64, f64)> = samples.iter().map(|s| (s.p, s.mape_percent)).collect();
    let time_model = fit_linear(&time_points)?;
    let error_model = fit_log(&error_points)?;
    let (recommended, reason) = match solve_min_p(&error_model, epsilon) {
        Ok(p) => (Some(p), None),
        Err(e @ CalibrationError::Infeasible { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    Ok(CalibrationReport {
        samples: samples.len(),
        predicted_time_seconds: recommended.map(|p| time_model.predict(p)),
        time_model,
        error_model,
        epsilon,
        recommended_percentile: recommended,
        infeasible_reason: reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrate_fits_both_models_and_recommends_a_percentile() {
        let mut csv = String::from("p,time_seconds,mape_percent\n");
        for i in 0..20 {
            let p = 5.0 + 5.0 * i as f64;
            let time = 120.0 - p;
            let err = 20.0 * (-0.001 * p + 1.09).ln().max(0.0);
            csv.push_str(&format!("{p},{time},{err}\n"));
        }
        let report = calibrate(&csv, 1.0).unwrap();
        assert_eq!(report.samples, 20);
        assert!(report.time_model.slope < 0.0);
        let p = report.recommended_percentile.unwrap();
        assert!((0.0..=100.0).contains(&p));
        assert!(report.error_model.predict(p) <= 1.0 + 1e-6);
        assert!(report.predicted_time_seconds.is_some());
        assert!(report.infeasible_reason.is_none());
    }

    #[test]
    fn unreachable_budgets_are_reported_not_fatal() {
        let mut csv = String::new();
        for i in 0..10 {
            let p = 10.0 * (i + 1) as f64;
            csv.push_str(&format!("{p},{},{}\n", 100.0 - p, 50.0 - 0.2 * p));
        }
        let report = calibrate(&csv, 1.0).unwrap();
        assert!(report.recommended_percentile.is_none());
        assert!(report.infeasible_reason.unwrap().contains("unreachable"));
    }

    #[test]
    fn calibrate_rejects_nonsense_epsilon() {
        assert!(calibrate("1,2,3\n2,2,3\n3,2,3\n", -1.0).is_err());
    }

    #[test]
    fn top_functions_rank_by_self_samples() {
        let folded = "a;b 10\na;c 30\nd 5\n";
        let rows = top_functions(folded, "svc", "i", 2);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].function, "c");
        assert_eq!(rows[0].self_samples, 30);
        assert!((rows[0].share - 30.0 / 45.0).abs() < 1e-12);
        assert_eq!(rows[1].function, "b");
    }
}
