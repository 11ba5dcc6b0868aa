//! Folded stack-trace profiles and per-function accounting.
//!
//! A folded profile is newline-delimited text, one stack per line:
//! `frame;frame;frame count`. Frames are root-first and the sample count is
//! separated from the stack by the last space on the line, so frame names may
//! themselves contain spaces. In thread-aware input the first frame of each
//! line names the thread that owns the stack.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

/// Default thread identity assigned when input is not thread-annotated.
pub const DEFAULT_THREAD: &str = "all";

/// Errors produced while building or parsing profiles.
#[derive(Debug, Error)]
pub enum ProfileError {
    /// A folded line that cannot be decoded. `line_no` is 1-based.
    #[error("malformed folded line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    /// Frame (or thread) names delimit the folded format and so must be
    /// non-empty and free of `;` and newlines.
    #[error("invalid name {0:?}: must be non-empty and contain no ';' or newline")]
    InvalidName(String),
    /// A stack path with no frames.
    #[error("stack path must contain at least one frame")]
    EmptyPath,
    /// A sample count of zero carries no information and is rejected.
    #[error("sample count must be at least 1")]
    ZeroCount,
    /// Dividing samples by a frequency that is zero, negative or non-finite.
    #[error("sampling frequency must be positive and finite, got {0}")]
    NonPositiveFrequency(f64),
}

fn validate_name(name: &str) -> Result<(), ProfileError> {
    if name.is_empty() || name.contains(';') || name.contains('\n') {
        return Err(ProfileError::InvalidName(name.to_string()));
    }
    Ok(())
}

/// A single function name within a stack.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frame(String);

impl Frame {
    /// Validates and wraps a frame name.
    pub fn new(name: impl Into<String>) -> Result<Self, ProfileError> {
        let name = name.into();
        validate_name(&name)?;
        Ok(Frame(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A root-first call path. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StackPath {
    frames: Vec<Frame>,
}

impl StackPath {
    pub fn new(frames: Vec<Frame>) -> Result<Self, ProfileError> {
        if frames.is_empty() {
            return Err(ProfileError::EmptyPath);
        }
        Ok(StackPath { frames })
    }

    /// Builds a path from plain names, validating each.
    pub fn from_names<I, S>(names: I) -> Result<Self, ProfileError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let frames = names
            .into_iter()
            .map(Frame::new)
            .collect::<Result<Vec<_>, _>>()?;
        StackPath::new(frames)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// The leaf (innermost) frame, where on-CPU time is attributed.
    pub fn leaf(&self) -> &Frame {
        self.frames.last().expect("paths are never empty")
    }
}

/// One canonical profile entry: a thread, a call path and how many samples
/// landed on exactly that path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub thread: String,
    pub path: StackPath,
    pub count: u64,
}

/// Context describing the window a profile was captured in.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMeta {
    pub service: String,
    pub instance: String,
    pub frequency_hz: f64,
    pub window_seconds: f64,
    pub window_index: u64,
}

impl ProfileMeta {
    /// A placeholder meta for profiles assembled outside any capture window.
    pub fn synthetic(service: &str, instance: &str) -> Self {
        ProfileMeta {
            service: service.to_string(),
            instance: instance.to_string(),
            frequency_hz: 0.0,
            window_seconds: 0.0,
            window_index: 0,
        }
    }
}

/// A canonical folded profile: records sorted by `(thread, path)` with
/// duplicate keys summed, every count at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedProfile {
    records: Vec<TraceRecord>,
    pub meta: ProfileMeta,
}

impl FoldedProfile {
    /// Canonicalizes `records` (sorts, merges duplicates) and validates
    /// thread names and counts.
    pub fn new(records: Vec<TraceRecord>, meta: ProfileMeta) -> Result<Self, ProfileError> {
        let mut merged: BTreeMap<(String, StackPath), u64> = BTreeMap::new();
        for record in records {
            validate_name(&record.thread)?;
            if record.count == 0 {
                return Err(ProfileError::ZeroCount);
            }
            *merged.entry((record.thread, record.path)).or_insert(0) += record.count;
        }
        let records = merged
            .into_iter()
            .map(|((thread, path), count)| TraceRecord { thread, path, count })
            .collect();
        Ok(FoldedProfile { records, meta })
    }

    /// An empty profile (a window in which no samples arrived).
    pub fn empty(meta: ProfileMeta) -> Self {
        FoldedProfile { records: Vec::new(), meta }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total sample count across all records.
    pub fn total_samples(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }
}

/// Parses folded text into a canonical profile.
///
/// With `thread_aware` set, the first frame of every line is taken as the
/// thread identifier; otherwise all records belong to [`DEFAULT_THREAD`].
/// Blank lines are skipped. The count is split off at the last space, so
/// frame names may contain spaces.
pub fn parse_folded(
    text: &str,
    thread_aware: bool,
    meta: ProfileMeta,
) -> Result<FoldedProfile, ProfileError> {
    let malformed = |line_no: usize, reason: &str| ProfileError::MalformedLine {
        line_no,
        reason: reason.to_string(),
    };

    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (stack, count_str) = line
            .rsplit_once(' ')
            .ok_or_else(|| malformed(line_no, "missing sample count"))?;
        let count: u64 = count_str
            .parse()
            .map_err(|_| malformed(line_no, &format!("sample count {count_str:?} is not an integer")))?;
        if count == 0 {
            return Err(malformed(line_no, "sample count must be at least 1"));
        }

        let mut names = stack.split(';');
        let thread = if thread_aware {
            let t = names.next().unwrap_or("");
            validate_name(t).map_err(|_| malformed(line_no, "empty thread name"))?;
            t.to_string()
        } else {
            DEFAULT_THREAD.to_string()
        };

        let mut frames = Vec::new();
        for name in names {
            let frame =
                Frame::new(name).map_err(|_| malformed(line_no, "empty frame name"))?;
            frames.push(frame);
        }
        if frames.is_empty() {
            return Err(malformed(line_no, "stack has no frames"));
        }
        records.push(TraceRecord {
            thread,
            path: StackPath::new(frames)?,
            count,
        });
    }
    FoldedProfile::new(records, meta)
}

/// Serializes a profile to folded text, one line per record in canonical
/// order. The thread is always emitted as the leading frame, making
/// thread-aware [`parse_folded`] the exact inverse.
pub fn serialize_folded(profile: &FoldedProfile) -> String {
    let mut out = String::new();
    for record in &profile.records {
        out.push_str(&record.thread);
        for frame in record.path.frames() {
            out.push(';');
            out.push_str(frame.as_str());
        }
        out.push(' ');
        out.push_str(&record.count.to_string());
        out.push('\n');
    }
    out
}

/// Per-function sample attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FunctionCount {
    /// Samples whose leaf frame is this function.
    pub self_samples: u64,
    /// Samples whose path contains this function, counted once per record
    /// even under recursion.
    pub inclusive_samples: u64,
}

/// Self and inclusive sample totals for every function in a profile.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FunctionTotals {
    pub entries: BTreeMap<String, FunctionCount>,
}

impl FunctionTotals {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of self samples; equals the profile's total sample count.
    pub fn total_self_samples(&self) -> u64 {
        self.entries.values().map(|c| c.self_samples).sum()
    }
}

/// Computes self and inclusive totals per function name. Thread identities
/// are not functions and do not appear in the result.
pub fn function_totals(profile: &FoldedProfile) -> FunctionTotals {
    let mut entries: BTreeMap<String, FunctionCount> = BTreeMap::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for record in profile.records() {
        let leaf = record.path.leaf().as_str();
        entries.entry(leaf.to_string()).or_default().self_samples += record.count;

        seen.clear();
        for frame in record.path.frames() {
            // A function recursing within one stack still contributes its
            // count to inclusive time only once.
            if seen.insert(frame.as_str()) {
                entries
                    .entry(frame.as_str().to_string())
                    .or_default()
                    .inclusive_samples += record.count;
            }
        }
    }
    FunctionTotals { entries }
}

/// Converts a sample count into CPU seconds at the given sampling frequency.
pub fn cpu_time_seconds(samples: u64, frequency_hz: f64) -> Result<f64, ProfileError> {
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return Err(ProfileError::NonPositiveFrequency(frequency_hz));
    }
    Ok(samples as f64 / frequency_hz)
}

/// The top-k hotspot functions of one window, by self time, normalized to a
/// probability distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotDistribution {
    /// Function name to share of the selected top-k self samples.
    pub shares: BTreeMap<String, f64>,
    pub k: usize,
    pub window_index: u64,
}

impl HotspotDistribution {
    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }
}

/// Selects the `k` functions with the largest self-sample counts (ties broken
/// by name ascending) and normalizes their counts to sum to 1. Functions with
/// zero self time are never hotspots; empty totals yield an empty
/// distribution.
pub fn hotspot_distribution(
    totals: &FunctionTotals,
    k: usize,
    window_index: u64,
) -> HotspotDistribution {
    let mut ranked: Vec<(&String, u64)> = totals
        .entries
        .iter()
        .map(|(name, c)| (name, c.self_samples))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k);
    ranked.retain(|(_, s)| *s > 0);

    let total: u64 = ranked.iter().map(|(_, s)| s).sum();
    let shares = ranked
        .into_iter()
        .map(|(name, s)| (name.clone(), s as f64 / total as f64))
        .collect();
    HotspotDistribution { shares, k, window_index }
}
