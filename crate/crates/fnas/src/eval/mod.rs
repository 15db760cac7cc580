//! Evaluation backends producing accuracy and latency for sampled
//! architectures, plus the latency-penalized reward.

pub mod latency;
pub mod surrogate;
pub mod tabular;
pub mod toy;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::BlockWeights;

/// Outcome of evaluating one architecture.
#[derive(Debug, Clone)]
pub struct EvalResult {
    /// Proxy-task accuracy in [0, 1].
    pub accuracy: f64,
    /// Modeled latency in model units, strictly positive.
    pub latency: f64,
    /// Activated-sample cost of producing this result (0 for free lookups).
    pub cost_units: u64,
    /// Trained per-block parameters, when the backend produces them.
    pub checkpoint: Option<Vec<BlockWeights>>,
}

/// Reward shaping: target latency T and the (non-positive) exponent alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub target_latency: f64,
    pub alpha: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { target_latency: 10.0, alpha: -0.07 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_latency > 0.0) {
            return Err(Error::Config(format!(
                "target_latency must be positive, got {}",
                self.target_latency
            )));
        }
        if self.alpha > 0.0 {
            return Err(Error::Config(format!("alpha must be <= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// reward = acc * (lat / T)^alpha.
pub fn reward(accuracy: f64, latency: f64, cfg: &RewardConfig) -> Result<f64> {
    if !(latency > 0.0) {
        return Err(Error::Domain(format!("latency must be positive, got {latency}")));
    }
    Ok(accuracy * (latency / cfg.target_latency).powf(cfg.alpha))
}

/// Activated / free sample accounting, shared across evaluation fan-out.
#[derive(Debug, Default)]
pub struct SampleCounters {
    activated: AtomicU64,
    free: AtomicU64,
}

impl SampleCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(activated: u64, free: u64) -> Self {
        SampleCounters { activated: AtomicU64::new(activated), free: AtomicU64::new(free) }
    }

    pub fn add_activated(&self, cost_units: u64) {
        self.activated.fetch_add(cost_units, Ordering::Relaxed);
    }

    pub fn add_free(&self, n: u64) {
        self.free.fetch_add(n, Ordering::Relaxed);
    }

    pub fn activated(&self) -> u64 {
        self.activated.load(Ordering::Relaxed)
    }

    pub fn free(&self) -> u64 {
        self.free.load(Ordering::Relaxed)
    }
}
