//! Replay kernel: paces a recorded folded corpus as if it were being
//! sampled live, so pipelines can be exercised deterministically.

use crate::profile::{parse_folded, FoldedProfile, ProfileMeta, TraceRecord};

use super::{KernelBackend, KernelError};

/// Replays a folded corpus. Each window emits `round(frequency × window)`
/// samples (capped by what is left), spread across the remaining records in
/// proportion to their remaining counts; stopping drains everything left, so
/// the corpus is reproduced exactly once the kernel completes.
pub struct ReplayKernel {
    records: Vec<TraceRecord>,
    remaining: Vec<u64>,
    total_remaining: u64,
}

impl ReplayKernel {
    pub fn from_folded(text: &str, thread_aware: bool) -> Result<Self, KernelError> {
        let meta = ProfileMeta::synthetic("replay", "replay");
        let profile = parse_folded(text, thread_aware, meta)?;
        if profile.is_empty() {
            return Err(KernelError::InvalidConfig(
                "replay corpus contains no records".to_string(),
            ));
        }
        let records = profile.records().to_vec();
        let remaining: Vec<u64> = records.iter().map(|r| r.count).collect();
        let total_remaining = remaining.iter().sum();
        Ok(Self { records, remaining, total_remaining })
    }

    /// Samples left to replay.
    pub fn remaining_samples(&self) -> u64 {
        self.total_remaining
    }

    /// Takes `target` samples from the remaining pool, proportionally per
    /// record with largest-remainder rounding (ties to the earlier record).
    fn take(&mut self, target: u64) -> Vec<TraceRecord> {
        if target == 0 || self.total_remaining == 0 {
            return Vec::new();
        }
        let target = target.min(self.total_remaining);
        let total = self.total_remaining as f64;

        let mut base = vec![0u64; self.records.len()];
        let mut fractions: Vec<(f64, usize)> = Vec::new();
        let mut allocated = 0u64;
        for (i, &left) in self.remaining.iter().enumerate() {
            if left == 0 {
                continue;
            }
            let quota = target as f64 * left as f64 / total;
            let whole = (quota.floor() as u64).min(left);
            base[i] = whole;
            allocated += whole;
            fractions.push((quota - whole as f64, i));
        }

        // Hand out the rounding leftover by largest fractional part; index
        // order breaks ties so the split is deterministic.
        fractions.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut leftover = target.saturating_sub(allocated);
        while leftover > 0 {
            let mut moved = false;
            for &(_, i) in &fractions {
                if leftover == 0 {
                    break;
                }
                if base[i] < self.remaining[i] {
                    base[i] += 1;
                    leftover -= 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }

        let mut out = Vec::new();
        for (i, take) in base.iter().enumerate() {
            if *take == 0 {
                continue;
            }
            self.remaining[i] -= take;
            self.total_remaining -= take;
            out.push(TraceRecord {
                thread: self.records[i].thread.clone(),
                path: self.records[i].path.clone(),
                count: *take,
            });
        }
        out
    }
}

impl KernelBackend for ReplayKernel {
    fn collect(
        &mut self,
        meta: &ProfileMeta,
        _next_frequency_hz: f64,
    ) -> Result<FoldedProfile, KernelError> {
        let target = (meta.frequency_hz * meta.window_seconds).round() as u64;
        let records = self.take(target);
        Ok(FoldedProfile::new(records, meta.clone())?)
    }

    fn drain(&mut self, meta: &ProfileMeta) -> Result<FoldedProfile, KernelError> {
        let target = self.total_remaining;
        let records = self.take(target);
        Ok(FoldedProfile::new(records, meta.clone())?)
    }
}
