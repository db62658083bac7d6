use serde::{Deserialize, Serialize};

use super::DqnError;
use crate::nn::AdamConfig;

/// Linear decay from `start` to `end` over `decay_steps` decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync: u64,
    pub epsilon: EpsilonSchedule,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            optimizer: AdamConfig::default(),
            batch_size: 64,
            replay_capacity: 15_000,
            target_sync: 50,
            epsilon: EpsilonSchedule::default(),
            episodes: 1_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let err = |m: &str| Err(DqnError::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return err("gamma must lie in [0, 1)");
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return err("learning rate must be positive");
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return err("Adam betas must lie in [0, 1)");
        }
        if !(o.epsilon > 0.0) {
            return err("Adam epsilon must be positive");
        }
        if self.batch_size == 0 {
            return err("batch size must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return err("replay capacity must hold at least one batch");
        }
        if self.target_sync == 0 {
            return err("target sync period must be positive");
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end)) {
            return err("epsilon bounds must lie in [0, 1]");
        }
        Ok(())
    }
}
