//! Full-sample pruning: drop the long tail of near-idle threads while
//! retaining a configured share of total samples.
//!
//! Thread activity is heavily skewed in practice — a small minority of
//! threads carries almost all samples — so ranking threads by sample count
//! and keeping the minimal prefix that covers `p` percent of samples discards
//! most per-thread data at a bounded cost to per-function accuracy. The cost
//! is quantified by [`mape_top_n`], the mean absolute percentage error over
//! the hottest functions.

use thiserror::Error;

use crate::profile::{function_totals, FoldedProfile};

#[derive(Debug, Error)]
pub enum FspError {
    /// Pruning or error measurement over a profile with no samples.
    #[error("profile has no samples")]
    EmptyProfile,
    /// Coverage percentile outside `(0, 100]`.
    #[error("coverage percentile must be in (0, 100], got {0}")]
    InvalidPercentile(f64),
}

/// One thread and its total sample count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadSamples {
    pub thread: String,
    pub samples: u64,
}

/// Threads ordered by sample count descending, ties by name ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadRanking {
    pub entries: Vec<ThreadSamples>,
    pub total_samples: u64,
}

impl ThreadRanking {
    /// Number of leading threads needed to cover at least `percentile`
    /// percent of all samples.
    pub fn covering_prefix_len(&self, percentile: f64) -> usize {
        let total = self.total_samples as f64;
        let mut cumulative = 0u64;
        for (i, entry) in self.entries.iter().enumerate() {
            cumulative += entry.samples;
            if cumulative as f64 * 100.0 >= percentile * total {
                return i + 1;
            }
        }
        self.entries.len()
    }
}

/// Sums samples per thread and ranks them.
pub fn rank_threads(profile: &FoldedProfile) -> ThreadRanking {
    let mut per_thread: std::collections::HashMap<&str, u64> = std::collections::HashMap::new();
    for record in profile.records() {
        *per_thread.entry(record.thread.as_str()).or_insert(0) += record.count;
    }
    let mut entries: Vec<ThreadSamples> = per_thread
        .into_iter()
        .map(|(thread, samples)| ThreadSamples { thread: thread.to_string(), samples })
        .collect();
    entries.sort_by(|a, b| b.samples.cmp(&a.samples).then_with(|| a.thread.cmp(&b.thread)));
    let total_samples = entries.iter().map(|e| e.samples).sum();
    ThreadRanking { entries, total_samples }
}

/// Outcome of one pruning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub coverage_percentile: f64,
    pub retained_threads: usize,
    pub discarded_threads: usize,
    /// Fraction of total samples kept, in `[0, 1]`.
    pub retained_sample_share: f64,
}

/// Retains the minimal ranked-thread prefix whose cumulative samples reach
/// `coverage_percentile` percent of the total; all records of other threads
/// are dropped. A percentile of 100 retains everything.
pub fn prune(
    profile: &FoldedProfile,
    coverage_percentile: f64,
) -> Result<(FoldedProfile, PruneReport), FspError> {
    if !(coverage_percentile.is_finite()
        && coverage_percentile > 0.0
        && coverage_percentile <= 100.0)
    {
        return Err(FspError::InvalidPercentile(coverage_percentile));
    }
    if profile.is_empty() {
        return Err(FspError::EmptyProfile);
    }

    let ranking = rank_threads(profile);
    let keep = ranking.covering_prefix_len(coverage_percentile);
    let retained: std::collections::HashSet<&str> = ranking.entries[..keep]
        .iter()
        .map(|e| e.thread.as_str())
        .collect();

    let records = profile
        .records()
        .iter()
        .filter(|r| retained.contains(r.thread.as_str()))
        .cloned()
        .collect();
    let pruned = FoldedProfile::new(records, profile.meta.clone())
        .expect("pruning preserves record validity");

    let report = PruneReport {
        coverage_percentile,
        retained_threads: keep,
        discarded_threads: ranking.entries.len() - keep,
        retained_sample_share: pruned.total_samples() as f64 / ranking.total_samples as f64,
    };
    Ok((pruned, report))
}

/// Mean absolute percentage error of per-function self-time shares in
/// `pruned` against `reference`, over the `n` hottest reference functions.
///
/// Shares are self samples renormalized over each profile's own total; a
/// function absent from `pruned` contributes a 100% error.
pub fn mape_top_n(
    reference: &FoldedProfile,
    pruned: &FoldedProfile,
    n: usize,
) -> Result<f64, FspError> {
    if reference.is_empty() {
        return Err(FspError::EmptyProfile);
    }
    let ref_totals = function_totals(reference);
    let ref_total = reference.total_samples() as f64;

    let mut ranked: Vec<(&String, u64)> = ref_totals
        .entries
        .iter()
        .map(|(name, c)| (name, c.self_samples))
        .filter(|(_, s)| *s > 0)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(n);

    let pruned_totals = function_totals(pruned);
    let pruned_total = pruned.total_samples() as f64;

    let mut error_sum = 0.0;
    for (name, self_samples) in &ranked {
        let r = *self_samples as f64 / ref_total;
        let q = if pruned_total > 0.0 {
            pruned_totals
                .entries
                .get(*name)
                .map_or(0.0, |c| c.self_samples as f64 / pruned_total)
        } else {
            0.0
        };
        error_sum += (r - q).abs() / r;
    }
    Ok(100.0 / ranked.len() as f64 * error_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{parse_folded, ProfileMeta};

    fn profile(text: &str) -> FoldedProfile {
        parse_folded(text, true, ProfileMeta::synthetic("svc", "i1")).unwrap()
    }

    #[test]
    fn ranks_threads_by_samples_then_name() {
        let p = profile("A;f 5\nB;f 10\nC;f 1\n");
        let r = rank_threads(&p);
        assert_eq!(r.total_samples, 16);
        let order: Vec<&str> = r.entries.iter().map(|e| e.thread.as_str()).collect();
        assert_eq!(order, ["B", "A", "C"]);
    }

    #[test]
    fn equal_thread_counts_rank_by_name() {
        let p = profile("Z;f 3\nA;f 3\nM;f 3\n");
        let order: Vec<String> = rank_threads(&p).entries.into_iter().map(|e| e.thread).collect();
        assert_eq!(order, ["A", "M", "Z"]);
    }

    #[test]
    fn prune_keeps_minimal_covering_prefix() {
        let p = profile("T1;f 60\nT2;g 30\nT3;h 10\n");
        let (pruned, report) = prune(&p, 60.0).unwrap();
        assert_eq!(report.retained_threads, 1);
        assert_eq!(report.discarded_threads, 2);
        assert_eq!(pruned.total_samples(), 60);
        assert!((report.retained_sample_share - 0.6).abs() < 1e-12);

        let (_, report) = prune(&p, 61.0).unwrap();
        assert_eq!(report.retained_threads, 2);

        // An exact boundary still counts as covered.
        let (_, report) = prune(&p, 90.0).unwrap();
        assert_eq!(report.retained_threads, 2);
    }

    #[test]
    fn prune_at_100_is_identity() {
        let p = profile("T1;f 60\nT2;g 30\nT3;h 10\n");
        let (pruned, report) = prune(&p, 100.0).unwrap();
        assert_eq!(pruned.records(), p.records());
        assert_eq!(report.discarded_threads, 0);
        assert_eq!(report.retained_sample_share, 1.0);
    }

    #[test]
    fn prune_drops_only_whole_threads() {
        let p = profile("T1;f 50\nT1;g 10\nT2;h 40\n");
        let (pruned, _) = prune(&p, 60.0).unwrap();
        assert!(pruned.records().iter().all(|r| r.thread == "T1"));
        assert_eq!(pruned.total_samples(), 60);
    }

    #[test]
    fn prune_validates_inputs() {
        let p = profile("T1;f 1\n");
        assert!(matches!(prune(&p, 0.0), Err(FspError::InvalidPercentile(_))));
        assert!(matches!(prune(&p, 100.1), Err(FspError::InvalidPercentile(_))));
        let empty = FoldedProfile::empty(ProfileMeta::synthetic("svc", "i1"));
        assert!(matches!(prune(&empty, 99.0), Err(FspError::EmptyProfile)));
    }

    #[test]
    fn mape_matches_hand_computation() {
        // Reference shares a/b/c = 0.5/0.3/0.2, pruned = 0.55/0.25/0.20:
        // (100/3) * (0.05/0.5 + 0.05/0.3 + 0) = 80/9.
        let reference = profile("T;a 50\nT;b 30\nT;c 20\n");
        let pruned = profile("T;a 55\nT;b 25\nT;c 20\n");
        let mape = mape_top_n(&reference, &pruned, 3).unwrap();
        assert!((mape - 80.0 / 9.0).abs() < 1e-12, "mape {mape}");
    }

    #[test]
    fn mape_of_identical_profiles_is_zero() {
        let p = profile("T;a 50\nT;b 30\nT;c 20\n");
        assert_eq!(mape_top_n(&p, &p, 3).unwrap(), 0.0);
    }

    #[test]
    fn absent_functions_count_as_full_error() {
        let reference = profile("T;a 50\nT;b 50\n");
        let pruned = profile("T;a 50\n");
        // a: |0.5 - 1.0|/0.5 = 1, b: |0.5 - 0|/0.5 = 1 -> 100%.
        let mape = mape_top_n(&reference, &pruned, 2).unwrap();
        assert!((mape - 100.0).abs() < 1e-12);
    }

    #[test]
    fn mape_considers_only_top_n_reference_functions() {
        let reference = profile("T;a 60\nT;b 30\nT;c 10\n");
        let pruned = profile("T;a 60\nT;b 30\n");
        // Top-2 of the reference (a, b) gain share in the pruned profile:
        // a: |0.6 - 2/3|/0.6, b: |0.3 - 1/3|/0.3, each = 1/9.
        let mape = mape_top_n(&reference, &pruned, 2).unwrap();
        assert!((mape - 100.0 / 9.0).abs() < 1e-9, "mape {mape}");
    }

    #[test]
    fn mape_rejects_empty_reference() {
        let empty = FoldedProfile::empty(ProfileMeta::synthetic("svc", "i1"));
        let p = profile("T;a 1\n");
        assert!(matches!(mape_top_n(&empty, &p, 5), Err(FspError::EmptyProfile)));
    }
}
