//! Frequency-decay adaptation: steering the sampling frequency from the
//! drift between consecutive hotspot distributions.
//!
//! Each window's top-k hotspot distribution is compared with the previous
//! one via Jensen-Shannon divergence. Divergence above a threshold signals a
//! hotspot shift and raises the frequency by `1/lambda`; a long enough run of
//! stable windows decays it by `lambda`. Frequencies are always clamped to a
//! configured band.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::HotspotDistribution;

#[derive(Debug, Error)]
pub enum FdaError {
    /// Distributions must be non-negative to have a defined divergence.
    #[error("share of {function:?} is negative ({share})")]
    NegativeShare { function: String, share: f64 },
    /// A controller parameter outside its documented range.
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

/// Controller parameters. Fields omitted from a JSON document take the
/// documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdaConfig {
    /// Divergence threshold above which a hotspot shift is declared.
    pub theta: f64,
    /// Decay factor in `(0, 1)`: stable runs multiply the frequency by
    /// `lambda`, shifts divide by it.
    pub lambda: f64,
    /// A decay fires only after strictly more than this many consecutive
    /// stable windows.
    pub stable_windows_required: u32,
    /// Number of hotspot functions compared between windows.
    pub k: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for FdaConfig {
    fn default() -> Self {
        FdaConfig {
            theta: 0.5,
            lambda: 0.8,
            stable_windows_required: 5,
            k: 10,
            f_min_hz: 10.0,
            f_max_hz: 10_000.0,
        }
    }
}

impl FdaConfig {
    pub fn validate(&self) -> Result<(), FdaError> {
        let bad = |msg: String| Err(FdaError::InvalidConfig(msg));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must be in (0, 1), got {}", self.theta));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda must be in (0, 1), got {}", self.lambda));
        }
        if self.k == 0 {
            return bad("k must be at least 1".to_string());
        }
        if !(self.f_min_hz.is_finite() && self.f_min_hz > 0.0) {
            return bad(format!("f_min_hz must be positive, got {}", self.f_min_hz));
        }
        if !(self.f_max_hz.is_finite() && self.f_max_hz >= self.f_min_hz) {
            return bad(format!(
                "f_max_hz must be at least f_min_hz, got {} < {}",
                self.f_max_hz, self.f_min_hz
            ));
        }
        Ok(())
    }

    fn clamp(&self, frequency_hz: f64) -> f64 {
        frequency_hz.clamp(self.f_min_hz, self.f_max_hz)
    }
}

/// Jensen-Shannon divergence between two hotspot distributions, base-2 logs,
/// so the result lies in `[0, 1]`.
///
/// Supports are union-aligned with zero fill and each side is renormalized to
/// sum to 1. Two empty distributions diverge by 0; an empty versus a
/// non-empty one by 1.
pub fn js_divergence(p: &HotspotDistribution, q: &HotspotDistribution) -> Result<f64, FdaError> {
    for dist in [p, q] {
        for (function, &share) in &dist.shares {
            if share < 0.0 || share.is_nan() {
                return Err(FdaError::NegativeShare { function: function.clone(), share });
            }
        }
    }

    let p_sum: f64 = p.shares.values().sum();
    let q_sum: f64 = q.shares.values().sum();
    match (p_sum > 0.0, q_sum > 0.0) {
        (false, false) => return Ok(0.0),
        (false, true) | (true, false) => return Ok(1.0),
        (true, true) => {}
    }

    let keys: BTreeSet<&String> = p.shares.keys().chain(q.shares.keys()).collect();
    let mut divergence = 0.0;
    for key in keys {
        let pi = p.shares.get(key).copied().unwrap_or(0.0) / p_sum;
        let qi = q.shares.get(key).copied().unwrap_or(0.0) / q_sum;
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            divergence += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            divergence += 0.5 * qi * (qi / mi).log2();
        }
    }
    Ok(divergence.max(0.0))
}

/// Controller state carried from window to window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyState {
    /// Frequency in force for the next window.
    pub frequency_hz: f64,
    /// Consecutive stable windows observed since the last frequency change.
    pub stable_count: u32,
    pub last_distribution: Option<HotspotDistribution>,
}

impl FrequencyState {
    pub fn new(initial_frequency_hz: f64) -> Self {
        FrequencyState {
            frequency_hz: initial_frequency_hz,
            stable_count: 0,
            last_distribution: None,
        }
    }
}

/// Result of advancing the controller by one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FdaStep {
    pub state: FrequencyState,
    /// Frequency to sample the next window at; equals `state.frequency_hz`.
    pub next_frequency_hz: f64,
    /// Divergence that drove the transition (0 on the first window).
    pub divergence: f64,
}

/// The pure frequency transition: given the current frequency, the stable
/// streak and one observed divergence, returns the next frequency and streak.
pub fn apply_divergence(
    frequency_hz: f64,
    stable_count: u32,
    divergence: f64,
    config: &FdaConfig,
) -> (f64, u32) {
    if divergence > config.theta {
        (config.clamp(frequency_hz / config.lambda), 0)
    } else {
        let streak = stable_count + 1;
        if streak > config.stable_windows_required {
            (config.clamp(frequency_hz * config.lambda), 0)
        } else {
            (frequency_hz, streak)
        }
    }
}

/// Advances the controller with the current window's hotspot distribution.
///
/// The first window has no predecessor, so its divergence is defined as 0 and
/// only starts the stable streak — the caller's initial frequency is kept.
pub fn next_frequency(
    state: &FrequencyState,
    current: &HotspotDistribution,
    config: &FdaConfig,
) -> FdaStep {
    let divergence = match &state.last_distribution {
        None => 0.0,
        Some(previous) => js_divergence(previous, current)
            .expect("hotspot distributions carry non-negative shares"),
    };
    let (frequency_hz, stable_count) =
        apply_divergence(state.frequency_hz, state.stable_count, divergence, config);
    FdaStep {
        state: FrequencyState {
            frequency_hz,
            stable_count,
            last_distribution: Some(current.clone()),
        },
        next_frequency_hz: frequency_hz,
        divergence,
    }
}
