//! Central controller for the distributed profiler: drives agent fleets
//! through the newline-JSON command protocol, persists task state between
//! CLI invocations, merges pulled profiles into the global flamegraph, and
//! fits calibration sweeps.

pub mod client;
pub mod config;
pub mod ops;
pub mod state;
