//! Seeded failure injection for the simulator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A scripted failure: attempt `attempt` of the replica fails after
/// `at_fraction` of its duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub stage: String,
    #[serde(default)]
    pub replica: u32,
    #[serde(default)]
    pub attempt: u32,
    pub at_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    /// Failures per simulated hour for every placement.
    #[serde(default)]
    pub failure_rate: f64,
    /// Per-stage overrides of `failure_rate`.
    #[serde(default)]
    pub stage_rates: BTreeMap<String, f64>,
    /// Extra failure rate for spot-tier placements.
    #[serde(default)]
    pub spot_preemption_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default)]
    pub injected: Vec<InjectedFault>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid fault model: {0}")]
pub struct FaultModelError(pub String);

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel::none()
    }
}

impl FaultModel {
    /// No failures ever.
    pub fn none() -> Self {
        FaultModel {
            failure_rate: 0.0,
            stage_rates: BTreeMap::new(),
            spot_preemption_rate: 0.0,
            seed: 0,
            max_retries: 0,
            injected: Vec::new(),
        }
    }

    pub fn with_rate(failure_rate: f64, seed: u64, max_retries: u32) -> Self {
        FaultModel {
            failure_rate,
            seed,
            max_retries,
            ..FaultModel::none()
        }
    }

    pub fn inject(mut self, stage: &str, replica: u32, attempt: u32, at_fraction: f64) -> Self {
        self.injected.push(InjectedFault {
            stage: stage.to_string(),
            replica,
            attempt,
            at_fraction,
        });
        self
    }

    pub fn check(&self) -> Result<(), FaultModelError> {
        let rate_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rate_ok(self.failure_rate) {
            return Err(FaultModelError(format!("failure rate {}", self.failure_rate)));
        }
        if !rate_ok(self.spot_preemption_rate) {
            return Err(FaultModelError(format!(
                "spot preemption rate {}",
                self.spot_preemption_rate
            )));
        }
        if let Some((s, r)) = self.stage_rates.iter().find(|(_, r)| !rate_ok(**r)) {
            return Err(FaultModelError(format!("failure rate {r} for stage {s}")));
        }
        if let Some(f) = self
            .injected
            .iter()
            .find(|f| !(f.at_fraction.is_finite() && (0.0..1.0).contains(&f.at_fraction)))
        {
            return Err(FaultModelError(format!(
                "injected fault fraction {} must lie in [0, 1)",
                f.at_fraction
            )));
        }
        Ok(())
    }

    pub fn rate_for(&self, stage: &str) -> f64 {
        self.stage_rates.get(stage).copied().unwrap_or(self.failure_rate)
    }

    pub fn injected_for(&self, stage: &str, replica: u32, attempt: u32) -> Option<f64> {
        self.injected
            .iter()
            .find(|f| f.stage == stage && f.replica == replica && f.attempt == attempt)
            .map(|f| f.at_fraction)
    }

    pub fn is_silent(&self) -> bool {
        self.failure_rate == 0.0
            && self.spot_preemption_rate == 0.0
            && self.stage_rates.values().all(|r| *r == 0.0)
            && self.injected.is_empty()
    }
}
