//! Cross-module scenarios: a synthetic workload driven through pruning and
//! the frequency-retuning loop, the way the agent wires them together.

use std::collections::BTreeMap;

use atys_core::fda::{next_frequency, FdaConfig, FrequencyState};
use atys_core::fsp::{mape_top_n, prune};
use atys_core::kernel::{
    kernel_start, CallTreeNode, KernelContext, KernelSpec, Phase, SyntheticWorkloadConfig,
};
use atys_core::profile::{function_totals, hotspot_distribution};

fn leaf(name: &str, weight: f64) -> CallTreeNode {
    CallTreeNode { name: name.to_string(), weight, self_weight: 0.0, children: Vec::new() }
}

/// Ten leaf functions under one root, with steeply skewed weights.
fn skewed_tree() -> Vec<CallTreeNode> {
    let weights = [100.0, 60.0, 40.0, 25.0, 15.0, 10.0, 8.0, 6.0, 4.0, 2.0];
    vec![CallTreeNode {
        name: "svc".to_string(),
        weight: 1.0,
        self_weight: 0.0,
        children: weights
            .iter()
            .enumerate()
            .map(|(i, &w)| leaf(&format!("f{i:02}"), w))
            .collect(),
    }]
}

fn context() -> KernelContext {
    KernelContext {
        service: "svc".to_string(),
        instance: "i1".to_string(),
        window_seconds: 1.0,
        process: None,
    }
}

#[test]
fn pruning_error_shrinks_as_coverage_grows() {
    let spec = KernelSpec::Synthetic {
        workload: SyntheticWorkloadConfig {
            seed: 42,
            thread_count: 200,
            zipf_exponent: 1.3,
            call_tree: skewed_tree(),
            phases: Vec::new(),
        },
    };
    let mut handle = kernel_start(&spec, context(), 120_000.0).unwrap();
    let window = handle.poll_window().unwrap();

    let mut errors = Vec::new();
    for percentile in [50.0, 75.0, 90.0, 99.0, 100.0] {
        let (kept, report) = prune(&window, percentile).unwrap();
        assert!(report.retained_sample_share * 100.0 >= percentile - 1e-9);
        errors.push((percentile, mape_top_n(&window, &kept, 10).unwrap()));
    }

    // Exact at full coverage, and aggressive pruning is strictly worse than
    // near-full coverage on this skewed workload.
    let full = errors.last().unwrap().1;
    assert!(full.abs() < 1e-12, "mape at 100% = {full}");
    let at_50 = errors[0].1;
    let at_99 = errors[3].1;
    assert!(
        at_99 <= at_50 + 1e-9,
        "99% coverage should not be worse than 50%: {at_99} vs {at_50}"
    );
    for &(percentile, mape) in &errors {
        assert!(mape.is_finite() && mape >= 0.0, "mape at {percentile} = {mape}");
    }
}

#[test]
fn retuning_loop_decays_when_stable_and_spikes_on_shift() {
    // Weights reverse between phases, so the hotspot distribution flips hard
    // at each boundary; eight quiet windows separate the flips.
    let reversed: BTreeMap<String, f64> = [100.0, 60.0, 40.0, 25.0, 15.0, 10.0, 8.0, 6.0, 4.0, 2.0]
        .iter()
        .enumerate()
        .map(|(i, &w)| (format!("f{:02}", 9 - i), w))
        .collect();
    let spec = KernelSpec::Synthetic {
        workload: SyntheticWorkloadConfig {
            seed: 7,
            thread_count: 16,
            zipf_exponent: 1.1,
            call_tree: skewed_tree(),
            phases: vec![
                Phase { duration_windows: 8, weight_overrides: BTreeMap::new() },
                Phase { duration_windows: 4, weight_overrides: reversed },
            ],
        },
    };
    let config = FdaConfig {
        stable_windows_required: 3,
        f_min_hz: 10.0,
        f_max_hz: 10_000.0,
        ..FdaConfig::default()
    };

    let mut handle = kernel_start(&spec, context(), 1000.0).unwrap();
    let mut state = FrequencyState::new(1000.0);
    let mut frequencies = Vec::new();
    let mut divergences = Vec::new();
    for _ in 0..13 {
        let window = handle.poll_window().unwrap();
        let hotspots =
            hotspot_distribution(&function_totals(&window), config.k, window.meta.window_index);
        let step = next_frequency(&state, &hotspots, &config);
        state = step.state;
        handle.set_frequency(step.next_frequency_hz);
        frequencies.push(step.next_frequency_hz);
        divergences.push(step.divergence);
    }

    let expected = [
        1000.0, 1000.0, 1000.0, 800.0, 800.0, 800.0, 800.0, 640.0, // quiet phase decays
        800.0, // window 8 flips the weights: spike
        800.0, 800.0, 800.0, // quiet again
        1000.0, // window 12 flips back: spike
    ];
    assert_eq!(frequencies.len(), expected.len());
    for (i, (got, want)) in frequencies.iter().zip(expected).enumerate() {
        assert!(
            (got - want).abs() < 1e-9,
            "window {i}: frequency {got}, expected {want} (divergence {})",
            divergences[i]
        );
    }

    // Quiet-window divergences sit far below the shift threshold; the two
    // phase flips tower far above it.
    for (i, d) in divergences.iter().enumerate() {
        if i == 8 || i == 12 {
            assert!(*d > 0.6, "window {i}: divergence {d}");
        } else {
            assert!(*d < 0.1, "window {i}: divergence {d}");
        }
    }
}

#[test]
fn stamped_frequency_follows_the_retuning_schedule() {
    let spec = KernelSpec::Synthetic {
        workload: SyntheticWorkloadConfig {
            seed: 3,
            thread_count: 4,
            zipf_exponent: 1.0,
            call_tree: skewed_tree(),
            phases: Vec::new(),
        },
    };
    let mut handle = kernel_start(&spec, context(), 500.0).unwrap();
    let w0 = handle.poll_window().unwrap();
    assert_eq!(w0.meta.frequency_hz, 500.0);
    assert_eq!(w0.total_samples(), 500);

    // The retune lands on the boundary after the in-flight window.
    handle.set_frequency(400.0);
    let w1 = handle.poll_window().unwrap();
    assert_eq!(w1.meta.frequency_hz, 500.0);
    assert_eq!(w1.total_samples(), 500);
    let w2 = handle.poll_window().unwrap();
    assert_eq!(w2.meta.frequency_hz, 400.0);
    assert_eq!(w2.total_samples(), 400);

    let last = handle.stop().unwrap();
    assert!(last.is_empty());
    assert_eq!(last.meta.window_index, 3);
}
