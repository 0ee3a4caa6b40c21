//! Terminal rewards and the shaping penalty built from planner feedback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EpisodeOutcome, OutcomeKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Episode time budget (s).
    pub tau_max: f64,
    /// Weight of the crash term; the comfort term gets `1 - alpha`.
    pub alpha: f64,
    pub success: f64,
    pub failure: f64,
    pub timeout: f64,
    /// Lower clamp of the per-step shaping reward.
    pub step_min: f64,
    /// Floor for the time since the first crash prediction (s).
    pub min_interval: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            tau_max: 25.0,
            alpha: 0.5,
            success: 1.0,
            failure: -1.0,
            timeout: 0.5,
            step_min: -2.0,
            min_interval: 1.0 / 3.0,
        }
    }
}

impl RewardConfig {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        let terminals_ok = [self.success, self.failure, self.timeout].iter().all(|r| (-2.0..=1.0).contains(r));
        if (0.0..=1.0).contains(&self.alpha)
            && self.tau_max > 0.0
            && self.min_interval > 0.0
            && (-2.0..=0.0).contains(&self.step_min)
            && terminals_ok
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("reward config: {self:?}")))
        }
    }
}

/// Remembers when the planner first reported infeasibility in an episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CrashClock {
    t_pred: Option<f64>,
}

impl CrashClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn t_pred(&self) -> Option<f64> {
        self.t_pred
    }

    /// Sets the first prediction time; later triggers are ignored.
    pub fn mark(&mut self, tau: f64) {
        if self.t_pred.is_none() {
            self.t_pred = Some(tau);
        }
    }
}

/// Non-terminal reward in `[step_min, 0]`.
///
/// `tau` is the episode time at which the reward is emitted and must be positive.
pub fn step_reward(p_crash: bool, p_comf: f64, tau: f64, clock: &mut CrashClock, config: &RewardConfig) -> f64 {
    debug_assert!(tau > 0.0);
    let tau = tau.max(config.min_interval);
    let mut penalty = config.beta() * p_comf.clamp(0.0, 1.0) * config.tau_max / tau;
    if p_crash {
        clock.mark(tau);
        let since = clock.t_pred.map_or(0.0, |t| tau - t).max(config.min_interval);
        penalty += config.alpha * config.tau_max / since;
    }
    (-penalty).clamp(config.step_min, 0.0)
}

pub fn terminal_reward(outcome: &EpisodeOutcome, config: &RewardConfig) -> f64 {
    match outcome.kind {
        OutcomeKind::Success => config.success,
        OutcomeKind::Failure => config.failure,
        OutcomeKind::Timeout => config.timeout,
    }
}
