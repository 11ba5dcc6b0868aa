//! Flamegraph trees: building from folded profiles, merging across
//! instances, and deterministic emission.
//!
//! Nodes with the same name at the same depth along the same ancestry are one
//! node; merging two graphs walks both trees from the root and sums values of
//! matching children. Children are keyed by name in ordered maps, so equal
//! graphs always serialize to identical bytes.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::profile::FoldedProfile;

/// Name of the synthetic root every stack hangs under.
pub const ROOT_NAME: &str = "root";

#[derive(Debug, Error)]
pub enum FlamegraphError {
    /// Aggregation over an empty list of graphs.
    #[error("cannot aggregate an empty list of flamegraphs")]
    EmptyInput,
    /// Hierarchical aggregation needs groups of at least two.
    #[error("group size must be at least 2, got {0}")]
    InvalidGroupSize(usize),
}

/// One node of a flamegraph tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlameNode {
    pub name: String,
    /// Samples that ended exactly on this node.
    pub self_value: u64,
    /// Samples on this node or anywhere below it:
    /// `total_value = self_value + sum(children total_value)`.
    pub total_value: u64,
    pub children: BTreeMap<String, FlameNode>,
}

impl FlameNode {
    fn new(name: &str) -> Self {
        FlameNode {
            name: name.to_string(),
            self_value: 0,
            total_value: 0,
            children: BTreeMap::new(),
        }
    }

    pub fn child(&self, name: &str) -> Option<&FlameNode> {
        self.children.get(name)
    }

    fn add_path(&mut self, names: &[&str], count: u64) {
        self.total_value += count;
        match names.split_first() {
            None => self.self_value += count,
            Some((head, rest)) => {
                let child = self
                    .children
                    .entry(head.to_string())
                    .or_insert_with(|| FlameNode::new(head));
                child.add_path(rest, count);
            }
        }
    }

    fn merge_from(&mut self, other: &FlameNode) {
        self.self_value += other.self_value;
        self.total_value += other.total_value;
        for (name, theirs) in &other.children {
            self.children
                .entry(name.clone())
                .or_insert_with(|| FlameNode::new(name))
                .merge_from(theirs);
        }
    }
}

/// Provenance of a flamegraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlamegraphMeta {
    pub service: String,
    /// How many per-instance graphs were folded into this one.
    pub instances_merged: u64,
    /// Highest capture-window index contributing to the graph.
    pub window_index: u64,
}

/// A flamegraph: a synthetic root plus per-graph provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flamegraph {
    pub root: FlameNode,
    pub meta: FlamegraphMeta,
}

impl Flamegraph {
    /// Total samples in the graph.
    pub fn total(&self) -> u64 {
        self.root.total_value
    }
}

/// Builds a flamegraph from a profile. With `thread_aware` set, each record's
/// thread becomes the first frame under the root; otherwise thread identity
/// is dropped and same-path stacks from different threads coalesce.
pub fn build(profile: &FoldedProfile, thread_aware: bool) -> Flamegraph {
    let mut root = FlameNode::new(ROOT_NAME);
    for record in profile.records() {
        let mut names: Vec<&str> = Vec::with_capacity(record.path.frames().len() + 1);
        if thread_aware {
            names.push(record.thread.as_str());
        }
        names.extend(record.path.frames().iter().map(|f| f.as_str()));
        root.add_path(&names, record.count);
    }
    Flamegraph {
        root,
        meta: FlamegraphMeta {
            service: profile.meta.service.clone(),
            instances_merged: 1,
            window_index: profile.meta.window_index,
        },
    }
}

/// Merges two flamegraphs by summing values of same-named nodes at the same
/// position. The service name is taken from `a`.
pub fn merge(a: &Flamegraph, b: &Flamegraph) -> Flamegraph {
    let mut root = a.root.clone();
    root.merge_from(&b.root);
    Flamegraph {
        root,
        meta: FlamegraphMeta {
            service: a.meta.service.clone(),
            instances_merged: a.meta.instances_merged + b.meta.instances_merged,
            window_index: a.meta.window_index.max(b.meta.window_index),
        },
    }
}

/// Left-fold merge of a non-empty list of graphs.
pub fn merge_all(graphs: &[Flamegraph]) -> Result<Flamegraph, FlamegraphError> {
    let (first, rest) = graphs.split_first().ok_or(FlamegraphError::EmptyInput)?;
    let mut acc = first.clone();
    for g in rest {
        acc = merge(&acc, g);
    }
    Ok(acc)
}

/// Merges graphs in consecutive groups of `group_size`, then repeats on the
/// group results until a single graph remains. Produces a graph identical to
/// [`merge_all`]; the grouping only changes the shape of the reduction, which
/// is how large fleets are aggregated level by level.
pub fn hierarchical_aggregate(
    graphs: &[Flamegraph],
    group_size: usize,
) -> Result<Flamegraph, FlamegraphError> {
    if group_size < 2 {
        return Err(FlamegraphError::InvalidGroupSize(group_size));
    }
    if graphs.is_empty() {
        return Err(FlamegraphError::EmptyInput);
    }
    let mut level: Vec<Flamegraph> = graphs.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(group_size)
            .map(|chunk| merge_all(chunk).expect("chunks are never empty"))
            .collect();
    }
    Ok(level.into_iter().next().expect("one graph remains"))
}

/// Emits folded text: one line per node with positive self value, the path
/// from (but excluding) the root, in depth-first name order.
pub fn emit_folded(graph: &Flamegraph) -> String {
    fn walk(node: &FlameNode, prefix: &mut String, out: &mut String) {
        let saved = prefix.len();
        if !prefix.is_empty() {
            prefix.push(';');
        }
        prefix.push_str(&node.name);
        if node.self_value > 0 {
            out.push_str(prefix);
            out.push(' ');
            out.push_str(&node.self_value.to_string());
            out.push('\n');
        }
        for child in node.children.values() {
            walk(child, prefix, out);
        }
        prefix.truncate(saved);
    }

    let mut out = String::new();
    let mut prefix = String::new();
    for child in graph.root.children.values() {
        walk(child, &mut prefix, &mut out);
    }
    out
}

#[derive(Serialize)]
struct JsonNode<'a> {
    name: &'a str,
    value: u64,
    children: Vec<JsonNode<'a>>,
}

impl<'a> JsonNode<'a> {
    fn from(node: &'a FlameNode) -> Self {
        JsonNode {
            name: &node.name,
            value: node.total_value,
            children: node.children.values().map(JsonNode::from).collect(),
        }
    }
}

/// Emits the d3-flame-graph JSON shape `{"name", "value", "children"}` with
/// `value` the node's total and children ordered by name. Byte-deterministic
/// for equal graphs.
pub fn emit_json(graph: &Flamegraph) -> String {
    serde_json::to_string(&JsonNode::from(&graph.root)).expect("flamegraph JSON cannot fail")
}
