//! Acceptance-check support. The checks themselves live in `tests/`; this
//! crate body only hosts the shared helpers they use.

use std::time::Instant;

/// Runs a named check, prints exactly one PASS/FAIL line for it, and panics
/// on failure so the test harness reports it.
///
/// The check returns a short human summary (sample counts, error levels) that
/// is echoed on the PASS line.
pub fn check(name: &str, budget_seconds: f64, body: impl FnOnce() -> Result<String, String>) {
    let started = Instant::now();
    let outcome = body();
    let elapsed = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            if elapsed > budget_seconds {
                println!("{name}: FAIL — finished in {elapsed:.2}s, budget {budget_seconds}s");
                panic!("{name} exceeded its {budget_seconds}s budget: {elapsed:.2}s");
            }
            println!("{name}: PASS ({elapsed:.2}s) — {detail}");
        }
        Err(reason) => {
            println!("{name}: FAIL ({elapsed:.2}s) — {reason}");
            panic!("{name} failed: {reason}");
        }
    }
}

/// Peak resident set size of this process in bytes, from the kernel's
/// high-water mark accounting.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            let kb: u64 = rest.trim().trim_end_matches(" kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}
