//! Four-way unsignalized intersection microsimulator.
//!
//! Scripted traffic follows its route with a cascade steering controller and the
//! Intelligent Driver Model; crossing conflicts are resolved by a constant-velocity
//! prediction and a right-of-way rule. The ego vehicle only chooses a speed setpoint.

mod config;
mod control;
mod env;
pub mod geometry;
mod idm;
mod log;
pub mod road;
mod vehicle;
mod yielding;

pub use config::{EnvConfig, PredictionParams, MAX_SCRIPTED_VEHICLES};
pub use control::{lateral_error, steering_for_route};
pub use env::{compute_reward, env_reset, EgoAction, IntersectionEnv, Scene, StepOutcome};
pub use idm::{idm_acceleration, IdmParams, LeaderGap};
pub use log::{write_trajectory_csv, TrajectoryRow, TRAJECTORY_HEADER};
pub use road::{Arm, Lane, LaneId, Road, RoadLayout, Turn};
pub use vehicle::{
    bicycle_step, check_collision, predict_positions, VehicleId, VehicleState, DEFAULT_LENGTH,
    DEFAULT_WIDTH, MAX_ACCELERATION, MAX_DECELERATION, MAX_STEERING_ANGLE,
};
pub use yielding::resolve_yielding;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("cannot step a terminal scene")]
    SteppedTerminal,
}
