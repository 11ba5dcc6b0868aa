//! Core building blocks for the Atys continuous-profiling toolkit.
//!
//! The crate is organized around the folded stack-trace profile as the
//! single interchange format:
//!
//! * [`profile`] — parsing, canonicalization and per-function accounting of
//!   folded stack traces.
//! * [`flamegraph`] — deterministic flamegraph trees, merging and emission.
//! * [`fsp`] — full-sample pruning: per-thread ranking and coverage-based
//!   pruning plus the error metric used to calibrate it.
//! * [`fda`] — frequency-decay adaptation: Jensen-Shannon divergence between
//!   hotspot distributions drives a sampling-frequency controller.
//! * [`calibration`] — curve fitting over pruning sweeps and the solver that
//!   picks the smallest retention percentile within an error budget.
//! * [`kernel`] — pluggable sampling back ends (replay, synthetic, external
//!   command) behind one lifecycle.

pub mod calibration;
pub mod fda;
pub mod flamegraph;
pub mod fsp;
pub mod kernel;
pub mod profile;
pub mod wire;
