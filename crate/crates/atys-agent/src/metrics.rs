//! Text exposition of task metrics in the line-oriented scrape format:
//! `# HELP` / `# TYPE` headers followed by `name{labels} value` samples.
//! Rendering works from immutable snapshots, so a scrape is always one
//! consistent view per task.

use std::fmt::Write;
use std::sync::Arc;

use crate::task::TaskSnapshot;

/// Escapes a label value: backslash, double quote and newline.
fn escape_label(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

fn task_labels(snapshot: &TaskSnapshot) -> String {
    format!(
        "service=\"{}\",instance=\"{}\",task_id=\"{}\"",
        escape_label(&snapshot.service),
        escape_label(&snapshot.instance),
        escape_label(&snapshot.task_id)
    )
}

fn header(out: &mut String, name: &str, kind: &str, help: &str) {
    let _ = writeln!(out, "# HELP {name} {help}");
    let _ = writeln!(out, "# TYPE {name} {kind}");
}

/// Renders the full exposition document for a set of task snapshots.
/// Per-function families emit at most `top_k` series per task (the latest
/// window's hotspot set); task-level families emit one series per task.
pub fn render(snapshots: &[Arc<TaskSnapshot>]) -> String {
    let mut sorted: Vec<&Arc<TaskSnapshot>> = snapshots.iter().collect();
    sorted.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let mut out = String::new();

    header(
        &mut out,
        "atys_function_samples_total",
        "counter",
        "Cumulative post-pruning self samples of an exported hotspot function.",
    );
    for snapshot in &sorted {
        let labels = task_labels(snapshot);
        for series in &snapshot.functions {
            let _ = writeln!(
                out,
                "atys_function_samples_total{{{labels},function=\"{}\"}} {}",
                escape_label(&series.function),
                series.samples_total
            );
        }
    }

    header(
        &mut out,
        "atys_function_cpu_seconds_total",
        "counter",
        "Cumulative CPU time of an exported hotspot function, converted at each window's stamped frequency.",
    );
    for snapshot in &sorted {
        let labels = task_labels(snapshot);
        for series in &snapshot.functions {
            let _ = writeln!(
                out,
                "atys_function_cpu_seconds_total{{{labels},function=\"{}\"}} {}",
                escape_label(&series.function),
                series.cpu_seconds_total
            );
        }
    }

    header(
        &mut out,
        "atys_function_share",
        "gauge",
        "Share of an exported function in the latest window's hotspot distribution.",
    );
    for snapshot in &sorted {
        let labels = task_labels(snapshot);
        for series in &snapshot.functions {
            let _ = writeln!(
                out,
                "atys_function_share{{{labels},function=\"{}\"}} {}",
                escape_label(&series.function),
                series.share
            );
        }
    }

    header(
        &mut out,
        "atys_sampling_frequency_hz",
        "gauge",
        "Sampling frequency in force for the task's next window.",
    );
    for snapshot in &sorted {
        let _ = writeln!(
            out,
            "atys_sampling_frequency_hz{{{}}} {}",
            task_labels(snapshot),
            snapshot.frequency_hz
        );
    }

    header(
        &mut out,
        "atys_js_divergence",
        "gauge",
        "Hotspot-distribution divergence measured at the latest non-empty window.",
    );
    for snapshot in &sorted {
        if let Some(divergence) = snapshot.last_divergence {
            let _ = writeln!(
                out,
                "atys_js_divergence{{{}}} {divergence}",
                task_labels(snapshot)
            );
        }
    }

    header(
        &mut out,
        "atys_pruned_threads",
        "gauge",
        "Threads discarded by coverage pruning in the latest non-empty window.",
    );
    for snapshot in &sorted {
        if let Some(pruned) = snapshot.pruned_threads {
            let _ = writeln!(out, "atys_pruned_threads{{{}}} {pruned}", task_labels(snapshot));
        }
    }

    header(
        &mut out,
        "atys_windows_completed_total",
        "counter",
        "Profiling windows completed by the task, including empty ones.",
    );
    for snapshot in &sorted {
        let _ = writeln!(
            out,
            "atys_windows_completed_total{{{}}} {}",
            task_labels(snapshot),
            snapshot.windows_completed
        );
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::FunctionSeries;
    use atys_core::wire::TaskState;

    fn snapshot() -> TaskSnapshot {
        TaskSnapshot {
            task_id: "t1".to_string(),
            service: "checkout".to_string(),
            instance: "node-1".to_string(),
            state: TaskState::Running,
            failure: None,
            windows_completed: 3,
            frequency_hz: 800.0,
            last_divergence: Some(0.015625),
            pruned_threads: Some(7),
            functions: vec![
                FunctionSeries {
                    function: "alloc".to_string(),
                    samples_total: 1200,
                    cpu_seconds_total: 1.2,
                    share: 0.6,
                },
                FunctionSeries {
                    function: "parse".to_string(),
                    samples_total: 800,
                    cpu_seconds_total: 0.8,
                    share: 0.4,
                },
            ],
            total_samples: 2000,
            folded: String::new(),
        }
    }

    #[test]
    fn empty_agent_renders_only_headers() {
        let doc = render(&[]);
        for line in doc.lines() {
            assert!(line.starts_with('#'), "unexpected sample line: {line}");
        }
        for family in [
            "atys_function_samples_total",
            "atys_function_cpu_seconds_total",
            "atys_function_share",
            "atys_sampling_frequency_hz",
            "atys_js_divergence",
            "atys_pruned_threads",
            "atys_windows_completed_total",
        ] {
            assert!(doc.contains(&format!("# TYPE {family} ")), "{family} header missing");
        }
    }

    #[test]
    fn samples_carry_identity_labels_and_values() {
        let doc = render(&[Arc::new(snapshot())]);
        assert!(doc.contains(
            "atys_function_samples_total{service=\"checkout\",instance=\"node-1\",\
             task_id=\"t1\",function=\"alloc\"} 1200"
        ));
        assert!(doc.contains(
            "atys_function_share{service=\"checkout\",instance=\"node-1\",\
             task_id=\"t1\",function=\"parse\"} 0.4"
        ));
        assert!(doc.contains(
            "atys_sampling_frequency_hz{service=\"checkout\",instance=\"node-1\",task_id=\"t1\"} 800"
        ));
        assert!(doc.contains(
            "atys_windows_completed_total{service=\"checkout\",instance=\"node-1\",task_id=\"t1\"} 3"
        ));
        assert!(doc.contains("atys_js_divergence{"));
        assert!(doc.contains("} 0.015625"));
    }

    #[test]
    fn divergence_series_is_absent_until_measured() {
        let mut fresh = snapshot();
        fresh.last_divergence = None;
        fresh.pruned_threads = None;
        let doc = render(&[Arc::new(fresh)]);
        assert!(!doc.contains("atys_js_divergence{"));
        assert!(!doc.contains("atys_pruned_threads{"));
        // Headers stay, so the family set is stable across scrapes.
        assert!(doc.contains("# TYPE atys_js_divergence gauge"));
    }

    #[test]
    fn label_values_are_escaped() {
        let mut odd = snapshot();
        odd.service = "a\"b\\c\nd".to_string();
        odd.functions.truncate(1);
        odd.functions[0].function = "frame \"quoted\"".to_string();
        let doc = render(&[Arc::new(odd)]);
        assert!(doc.contains(r#"service="a\"b\\c\nd""#), "{doc}");
        assert!(doc.contains(r#"function="frame \"quoted\"""#), "{doc}");
        assert!(!doc.contains("a\"b\\c\nd"), "raw newline leaked into a label");
    }

    #[test]
    fn tasks_render_in_task_id_order() {
        let mut a = snapshot();
        a.task_id = "zz".to_string();
        let mut b = snapshot();
        b.task_id = "aa".to_string();
        let doc = render(&[Arc::new(a), Arc::new(b)]);
        let first = doc.find("task_id=\"aa\"").unwrap();
        let second = doc.find("task_id=\"zz\"").unwrap();
        assert!(first < second);
    }
}
