//! Synthetic kernel: draws samples from a seeded weighted call tree so load
//! and accuracy studies have a ground-truth hotspot distribution to compare
//! against.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::profile::{FoldedProfile, Frame, ProfileMeta, StackPath, TraceRecord};

use super::{KernelBackend, KernelError};

/// One function in the synthetic call tree. `weight` picks this node among
/// its siblings; once reached, the sample stops here with probability
/// `self_weight / (self_weight + Σ children.weight)` and otherwise descends.
/// Nodes without children always stop.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CallTreeNode {
    pub name: String,
    pub weight: f64,
    #[serde(default)]
    pub self_weight: f64,
    #[serde(default)]
    pub children: Vec<CallTreeNode>,
}

/// A stretch of windows during which selected functions get different
/// sibling-selection weights, shifting the hotspot distribution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Phase {
    pub duration_windows: u64,
    #[serde(default)]
    pub weight_overrides: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticWorkloadConfig {
    pub seed: u64,
    /// Threads are ranked 1..=thread_count and drawn Zipf(zipf_exponent),
    /// so a handful of threads carry most samples, as in real services.
    pub thread_count: usize,
    pub zipf_exponent: f64,
    pub call_tree: Vec<CallTreeNode>,
    /// Cycled in order; empty means the base weights hold forever.
    #[serde(default)]
    pub phases: Vec<Phase>,
}

/// Call tree flattened for sampling, with one arena per phase.
struct ArenaNode {
    name: String,
    stop_weight: f64,
    /// `(cumulative_weight, arena_index)` over this node's children.
    children: Vec<(f64, usize)>,
    total_weight: f64,
}

struct PhaseArena {
    nodes: Vec<ArenaNode>,
    /// `(cumulative_weight, arena_index)` over the tree roots.
    roots: Vec<(f64, usize)>,
    root_total: f64,
}

impl PhaseArena {
    fn build(
        tree: &[CallTreeNode],
        overrides: &BTreeMap<String, f64>,
    ) -> Result<Self, KernelError> {
        fn add(
            node: &CallTreeNode,
            overrides: &BTreeMap<String, f64>,
            nodes: &mut Vec<ArenaNode>,
        ) -> Result<(usize, f64), KernelError> {
            Frame::new(&node.name)
                .map_err(|e| KernelError::InvalidConfig(format!("call tree node name: {e}")))?;
            let weight = *overrides.get(&node.name).unwrap_or(&node.weight);
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(KernelError::InvalidConfig(format!(
                    "weight of `{}` must be finite and non-negative, got {weight}",
                    node.name
                )));
            }
            if !(node.self_weight.is_finite() && node.self_weight >= 0.0) {
                return Err(KernelError::InvalidConfig(format!(
                    "self weight of `{}` must be finite and non-negative, got {}",
                    node.name, node.self_weight
                )));
            }
            let mut children = Vec::with_capacity(node.children.len());
            let mut cum = 0.0;
            for child in &node.children {
                let (index, child_weight) = add(child, overrides, nodes)?;
                cum += child_weight;
                children.push((cum, index));
            }
            let stop_weight = if node.children.is_empty() { 1.0 } else { node.self_weight };
            let total_weight = stop_weight + cum;
            if total_weight <= 0.0 {
                return Err(KernelError::InvalidConfig(format!(
                    "`{}` can neither stop nor descend: self weight and child weights are all zero",
                    node.name
                )));
            }
            nodes.push(ArenaNode { name: node.name.clone(), stop_weight, children, total_weight });
            Ok((nodes.len() - 1, weight))
        }

        let mut nodes = Vec::new();
        let mut roots = Vec::with_capacity(tree.len());
        let mut cum = 0.0;
        for node in tree {
            let (index, weight) = add(node, overrides, &mut nodes)?;
            cum += weight;
            roots.push((cum, index));
        }
        if cum <= 0.0 {
            return Err(KernelError::InvalidConfig(
                "call tree root weights sum to zero".to_string(),
            ));
        }
        Ok(Self { nodes, roots, root_total: cum })
    }

    /// Walks the tree once, returning the arena indices along the sampled path.
    fn sample_path(&self, rng: &mut ChaCha8Rng, out: &mut Vec<usize>) {
        out.clear();
        let u = rng.gen_range(0.0..self.root_total);
        let pos = self.roots.partition_point(|(cum, _)| *cum <= u);
        let mut index = self.roots[pos.min(self.roots.len() - 1)].1;
        loop {
            out.push(index);
            let node = &self.nodes[index];
            if node.children.is_empty() {
                return;
            }
            let v = rng.gen_range(0.0..node.total_weight);
            if v < node.stop_weight {
                return;
            }
            let w = v - node.stop_weight;
            let pos = node.children.partition_point(|(cum, _)| *cum <= w);
            index = node.children[pos.min(node.children.len() - 1)].1;
        }
    }

    /// Probability that a sample's leaf frame is each function.
    fn leaf_shares(&self) -> BTreeMap<String, f64> {
        let mut shares = BTreeMap::new();
        // Children precede parents in the arena, so walk roots recursively.
        fn descend(
            arena: &PhaseArena,
            index: usize,
            reach: f64,
            shares: &mut BTreeMap<String, f64>,
        ) {
            let node = &arena.nodes[index];
            let stop = reach * node.stop_weight / node.total_weight;
            if stop > 0.0 {
                *shares.entry(node.name.clone()).or_insert(0.0) += stop;
            }
            let mut prev = 0.0;
            for &(cum, child) in &node.children {
                let p = reach * (cum - prev) / node.total_weight;
                prev = cum;
                if p > 0.0 {
                    descend(arena, child, p, shares);
                }
            }
        }
        let mut prev = 0.0;
        for &(cum, index) in &self.roots {
            let p = (cum - prev) / self.root_total;
            prev = cum;
            if p > 0.0 {
                descend(self, index, p, &mut shares);
            }
        }
        shares
    }
}

/// Seeded sampler over a weighted call tree with Zipf-distributed threads and
/// optional phase cycling. Identical config and frequency schedule produce
/// identical profiles.
pub struct SyntheticKernel {
    arenas: Vec<PhaseArena>,
    /// `(windows_before_phase_end, phase_index)` cumulative over one cycle.
    schedule: Vec<(u64, usize)>,
    cycle_windows: u64,
    zipf_cdf: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticKernel {
    pub fn new(config: SyntheticWorkloadConfig) -> Result<Self, KernelError> {
        if config.thread_count == 0 {
            return Err(KernelError::InvalidConfig("thread count must be at least 1".to_string()));
        }
        if !(config.zipf_exponent.is_finite() && config.zipf_exponent >= 0.0) {
            return Err(KernelError::InvalidConfig(format!(
                "zipf exponent must be finite and non-negative, got {}",
                config.zipf_exponent
            )));
        }
        if config.call_tree.is_empty() {
            return Err(KernelError::InvalidConfig("call tree is empty".to_string()));
        }

        let mut arenas = vec![PhaseArena::build(&config.call_tree, &BTreeMap::new())?];
        let mut schedule = Vec::new();
        let mut cycle_windows = 0;
        for (i, phase) in config.phases.iter().enumerate() {
            if phase.duration_windows == 0 {
                return Err(KernelError::InvalidConfig(format!(
                    "phase {i} has zero duration"
                )));
            }
            for (name, weight) in &phase.weight_overrides {
                if !(weight.is_finite() && *weight >= 0.0) {
                    return Err(KernelError::InvalidConfig(format!(
                        "phase {i} override for `{name}` must be finite and non-negative"
                    )));
                }
            }
            arenas.push(PhaseArena::build(&config.call_tree, &phase.weight_overrides)?);
            cycle_windows += phase.duration_windows;
            schedule.push((cycle_windows, i + 1));
        }

        let mut zipf_cdf = Vec::with_capacity(config.thread_count);
        let mut cum = 0.0;
        for rank in 1..=config.thread_count {
            cum += (rank as f64).powf(-config.zipf_exponent);
            zipf_cdf.push(cum);
        }

        Ok(Self {
            arenas,
            schedule,
            cycle_windows,
            zipf_cdf,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    /// Arena index in force for a window (0 is the base weights).
    fn phase_for_window(&self, window_index: u64) -> usize {
        if self.schedule.is_empty() {
            return 0;
        }
        let pos = window_index % self.cycle_windows;
        for &(end, arena) in &self.schedule {
            if pos < end {
                return arena;
            }
        }
        0
    }

    /// Ground-truth probability that a sample drawn in `window_index` has
    /// each function as its leaf frame.
    pub fn expected_leaf_shares(&self, window_index: u64) -> BTreeMap<String, f64> {
        self.arenas[self.phase_for_window(window_index)].leaf_shares()
    }

    fn thread_rank(&mut self) -> usize {
        let total = *self.zipf_cdf.last().unwrap();
        let u = self.rng.gen_range(0.0..total);
        let pos = self.zipf_cdf.partition_point(|cum| *cum <= u);
        pos.min(self.zipf_cdf.len() - 1) + 1
    }
}

impl KernelBackend for SyntheticKernel {
    fn collect(
        &mut self,
        meta: &ProfileMeta,
        _next_frequency_hz: f64,
    ) -> Result<FoldedProfile, KernelError> {
        let samples = (meta.frequency_hz * meta.window_seconds).round() as u64;
        let arena_index = self.phase_for_window(meta.window_index);

        let mut counts: HashMap<(usize, Vec<usize>), u64> = HashMap::new();
        let mut path = Vec::new();
        for _ in 0..samples {
            let rank = self.thread_rank();
            self.arenas[arena_index].sample_path(&mut self.rng, &mut path);
            *counts.entry((rank, path.clone())).or_insert(0) += 1;
        }

        let arena = &self.arenas[arena_index];
        let records = counts
            .into_iter()
            .map(|((rank, indices), count)| {
                let frames = indices.iter().map(|&i| arena.nodes[i].name.clone());
                TraceRecord {
                    thread: format!("w{rank:04}"),
                    path: StackPath::from_names(frames).expect("names validated at build"),
                    count,
                }
            })
            .collect();
        Ok(FoldedProfile::new(records, meta.clone())?)
    }

    fn drain(&mut self, meta: &ProfileMeta) -> Result<FoldedProfile, KernelError> {
        // Nothing is buffered between windows; the final flush is empty.
        Ok(FoldedProfile::empty(meta.clone()))
    }
}
