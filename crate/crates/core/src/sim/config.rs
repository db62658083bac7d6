use serde::{Deserialize, Serialize};

use super::idm::IdmParams;
use super::road::{Arm, RoadLayout, Turn};
use super::SimError;

/// Hard cap on scripted vehicles: ego plus 14 others fill a 15-row observation.
pub const MAX_SCRIPTED_VEHICLES: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionParams {
    pub horizon: f64,
    pub step: f64,
}

impl Default for PredictionParams {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub road: RoadLayout,
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    /// Whether the ego's road has right of way over the crossing road.
    pub ego_priority: bool,
    pub ego_arm: Arm,
    pub ego_destination: Turn,
    /// Physics sub-steps per policy decision.
    pub substeps: u32,
    /// Seconds between policy decisions.
    pub policy_period: f64,
    /// Episode length in decisions.
    pub horizon: u32,
    pub idm: IdmParams,
    /// Speed setpoints reachable by SLOWER / FASTER.
    pub ego_speeds: Vec<f64>,
    pub ego_initial_speed_index: usize,
    /// Proportional gain of the ego speed tracker (1/s).
    pub ego_speed_gain: f64,
    /// Distance from the ego's spawn point to its stop line.
    pub ego_spawn_distance: f64,
    pub ego_spawn_jitter: f64,
    pub reward_speed: f64,
    pub reward_speed_tolerance: f64,
    pub prediction: PredictionParams,
    pub spawn_speed_min: f64,
    pub spawn_speed_max: f64,
    /// Minimum centre-to-centre spacing of vehicles spawned on one lane.
    pub spawn_gap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            road: RoadLayout::default(),
            min_vehicles: 3,
            max_vehicles: 12,
            ego_priority: false,
            ego_arm: Arm::South,
            ego_destination: Turn::Left,
            substeps: 15,
            policy_period: 1.0,
            horizon: 13,
            idm: IdmParams::default(),
            ego_speeds: vec![0.0, 4.5, 9.0],
            ego_initial_speed_index: 2,
            ego_speed_gain: 1.0 / 0.6,
            ego_spawn_distance: 35.0,
            ego_spawn_jitter: 5.0,
            reward_speed: 9.0,
            reward_speed_tolerance: 0.1,
            prediction: PredictionParams::default(),
            spawn_speed_min: 6.0,
            spawn_speed_max: 9.0,
            spawn_gap: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn physics_dt(&self) -> f64 {
        self.policy_period / self.substeps as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: &str| Err(SimError::Config(msg.to_string()));
        let r = &self.road;
        if !(r.lane_width > 0.0) {
            return fail("lane width must be positive");
        }
        if !(r.approach_length > 0.0 && r.exit_length > 0.0 && r.right_turn_radius > 0.0) {
            return fail("road lengths and turn radius must be positive");
        }
        if self.max_vehicles > MAX_SCRIPTED_VEHICLES {
            return fail("at most 14 scripted vehicles are supported");
        }
        if self.min_vehicles > self.max_vehicles {
            return fail("min_vehicles exceeds max_vehicles");
        }
        if self.substeps == 0 || !(self.policy_period > 0.0) || self.horizon == 0 {
            return fail("substeps, policy period and horizon must be positive");
        }
        if self.ego_speeds.is_empty() || self.ego_speeds.iter().any(|v| !(*v >= 0.0)) {
            return fail("ego speed setpoints must be non-negative and non-empty");
        }
        if self.ego_initial_speed_index >= self.ego_speeds.len() {
            return fail("initial ego speed index out of range");
        }
        if !(self.ego_speed_gain > 0.0) {
            return fail("ego speed gain must be positive");
        }
        if !(self.ego_spawn_distance > 0.0)
            || self.ego_spawn_jitter < 0.0
            || self.ego_spawn_distance + self.ego_spawn_jitter > r.approach_length
        {
            return fail("ego spawn distance must lie on the approach lane");
        }
        if !(self.prediction.horizon > 0.0 && self.prediction.step > 0.0) {
            return fail("prediction horizon and step must be positive");
        }
        if !(self.spawn_speed_min >= 0.0 && self.spawn_speed_max >= self.spawn_speed_min) {
            return fail("invalid spawn speed range");
        }
        if !(self.spawn_gap > 0.0) {
            return fail("spawn gap must be positive");
        }
        let p = &self.idm;
        if !(p.desired_speed > 0.0
            && p.max_accel > 0.0
            && p.comfort_decel > 0.0
            && p.max_decel > 0.0
            && p.delta > 0.0
            && p.time_headway >= 0.0
            && p.min_gap >= 0.0)
        {
            return fail("IDM parameters must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = EnvConfig::default();
        c.validate().unwrap();
        assert!((c.physics_dt() - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_lane_width() {
        let mut c = EnvConfig::default();
        c.road.lane_width = 0.0;
        assert!(matches!(c.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn rejects_oversized_spawn() {
        let c = EnvConfig {
            max_vehicles: 15,
            ..EnvConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
