use serde::{Deserialize, Serialize};

use super::vehicle::VehicleState;

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired free-flow speed v0 (m/s).
    pub desired_speed: f64,
    pub max_accel: f64,
    /// Comfortable deceleration b.
    pub comfort_decel: f64,
    /// Hard braking limit, also used when yielding.
    pub max_decel: f64,
    pub delta: f64,
    /// Desired time headway T (s).
    pub time_headway: f64,
    /// Jam distance s0 (m).
    pub min_gap: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 9.0,
            max_accel: 3.0,
            comfort_decel: 5.0,
            max_decel: 9.0,
            delta: 4.0,
            time_headway: 1.5,
            min_gap: 2.0,
        }
    }
}

/// Bumper-to-bumper gap to the vehicle ahead and that vehicle's speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderGap {
    pub gap: f64,
    pub speed: f64,
}

pub fn idm_acceleration(follower: &VehicleState, leader: Option<LeaderGap>, p: &IdmParams) -> f64 {
    let v = follower.speed;
    let mut a = p.max_accel * (1.0 - (v / p.desired_speed).powf(p.delta));
    if let Some(leader) = leader {
        let gap = leader.gap.max(1e-2);
        let dv = v - leader.speed;
        let desired =
            p.min_gap + v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
        a -= p.max_accel * (desired / gap).powi(2);
    }
    a.clamp(-p.max_decel, p.max_accel)
}
