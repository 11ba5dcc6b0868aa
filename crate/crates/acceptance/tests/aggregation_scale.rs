//! Scale smoke: a thousand instance flamegraphs of five thousand paths each
//! merge into one global graph quickly and within a bounded footprint.

use acceptance::{check, peak_rss_bytes};
use atys_core::flamegraph::{build, emit_json, merge_all, Flamegraph};
use atys_core::profile::{FoldedProfile, ProfileMeta, StackPath, TraceRecord};

const INSTANCES: usize = 1_000;
const PATHS_PER_INSTANCE: usize = 5_000;
/// Instances run the same service, so their path sets overlap heavily; the
/// fleet-wide universe is modestly larger than any one instance's set.
const PATH_UNIVERSE: usize = 8_000;

fn path(id: usize) -> StackPath {
    StackPath::from_names([
        "svc".to_string(),
        format!("m{:02}", id % 20),
        format!("c{:02}", (id / 20) % 20),
        format!("leaf{id:04}"),
    ])
    .expect("generated names are valid")
}

fn instance_graph(instance: usize) -> (Flamegraph, u64) {
    let mut records = Vec::with_capacity(PATHS_PER_INSTANCE);
    let mut samples = 0u64;
    for slot in 0..PATHS_PER_INSTANCE {
        let id = (instance * 3 + slot) % PATH_UNIVERSE;
        let count = 1 + (id as u64 % 97);
        samples += count;
        records.push(TraceRecord { thread: "all".into(), path: path(id), count });
    }
    let profile = FoldedProfile::new(
        records,
        ProfileMeta::synthetic("svc", &format!("inst-{instance:04}")),
    )
    .expect("generated records are canonical");
    (build(&profile, false), samples)
}

#[test]
fn thousand_instance_aggregation_stays_fast_and_bounded() {
    check("thousand-instance aggregation", 60.0, || {
        let mut expected_total = 0u64;
        let mut reduced: Vec<Flamegraph> = Vec::new();
        let mut chunk: Vec<Flamegraph> = Vec::with_capacity(64);
        for instance in 0..INSTANCES {
            let (graph, samples) = instance_graph(instance);
            expected_total += samples;
            chunk.push(graph);
            // Reduce level by level in bounded groups, the way a controller
            // folds a large fleet, so at most one group is resident at once.
            if chunk.len() == 64 {
                reduced.push(merge_all(&chunk).map_err(|e| e.to_string())?);
                chunk.clear();
            }
        }
        if !chunk.is_empty() {
            reduced.push(merge_all(&chunk).map_err(|e| e.to_string())?);
        }
        let global = merge_all(&reduced).map_err(|e| e.to_string())?;

        if global.total() != expected_total {
            return Err(format!(
                "global total {} != sum of instance totals {expected_total}",
                global.total()
            ));
        }
        if global.meta.instances_merged != INSTANCES as u64 {
            return Err(format!(
                "merged instance count {} != {INSTANCES}",
                global.meta.instances_merged
            ));
        }

        let json = emit_json(&global);
        let parsed: serde_json::Value =
            serde_json::from_str(&json).map_err(|e| format!("emitted JSON invalid: {e}"))?;
        if parsed["value"] != serde_json::json!(expected_total) {
            return Err("JSON root value disagrees with the sample total".to_string());
        }

        let rss = peak_rss_bytes().ok_or("cannot read peak RSS")?;
        let limit = 1024 * 1024 * 1024;
        if rss >= limit {
            return Err(format!("peak RSS {} MiB exceeds 1 GiB", rss / (1024 * 1024)));
        }

        Ok(format!(
            "merged {INSTANCES} graphs x {PATHS_PER_INSTANCE} paths \
             ({expected_total} samples, {} MiB peak RSS, JSON valid)",
            rss / (1024 * 1024)
        ))
    });
}
