use std::f64::consts::FRAC_PI_3;

use serde::{Deserialize, Serialize};

use super::geometry::{rectangle_corners, rectangles_intersect, wrap_to_pi, Vec2};
use super::road::LaneId;

pub const DEFAULT_LENGTH: f64 = 5.0;
pub const DEFAULT_WIDTH: f64 = 2.0;

/// Front-wheel steering limit (rad).
pub const MAX_STEERING_ANGLE: f64 = FRAC_PI_3;
/// Longitudinal actuator limits (m/s^2).
pub const MAX_ACCELERATION: f64 = 6.0;
pub const MAX_DECELERATION: f64 = 9.0;

pub type VehicleId = u32;

/// Pose and speed of one traffic participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub x: f64,
    pub y: f64,
    /// Scalar speed, never negative.
    pub speed: f64,
    /// Heading in (-pi, pi].
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub route: Vec<LaneId>,
    /// Index into `route` of the lane currently driven.
    pub lane_index: usize,
    /// Right-of-way rank; the lower rank yields.
    pub priority_rank: i32,
}

impl VehicleState {
    pub fn new(id: VehicleId, x: f64, y: f64, speed: f64, heading: f64) -> Self {
        Self {
            id,
            x,
            y,
            speed: speed.max(0.0),
            heading: wrap_to_pi(heading),
            length: DEFAULT_LENGTH,
            width: DEFAULT_WIDTH,
            route: Vec::new(),
            lane_index: 0,
            priority_rank: 0,
        }
    }

    pub fn with_route(mut self, route: Vec<LaneId>) -> Self {
        self.route = route;
        self.lane_index = 0;
        self
    }

    pub fn with_priority(mut self, rank: i32) -> Self {
        self.priority_rank = rank;
        self
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World-frame velocity components.
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    pub fn current_lane(&self) -> Option<LaneId> {
        self.route.get(self.lane_index).copied()
    }

    pub fn on_last_lane(&self) -> bool {
        self.lane_index + 1 >= self.route.len()
    }

    pub fn corners(&self) -> [Vec2; 4] {
        rectangle_corners(self.position(), self.length, self.width, self.heading)
    }
}

/// One forward-Euler step of the kinematic bicycle model.
///
/// Steering is clamped to `±MAX_STEERING_ANGLE` and acceleration to
/// `[-MAX_DECELERATION, MAX_ACCELERATION]`; braking saturates at standstill.
pub fn bicycle_step(state: &VehicleState, accel: f64, steering: f64, dt: f64) -> VehicleState {
    let steering = steering.clamp(-MAX_STEERING_ANGLE, MAX_STEERING_ANGLE);
    let accel = accel.clamp(-MAX_DECELERATION, MAX_ACCELERATION);
    let beta = (0.5 * steering.tan()).atan();
    let v = state.speed;
    let mut next = state.clone();
    next.x += v * (state.heading + beta).cos() * dt;
    next.y += v * (state.heading + beta).sin() * dt;
    next.heading = wrap_to_pi(state.heading + v / state.length * beta.sin() * dt);
    next.speed = (v + accel * dt).max(0.0);
    next
}

/// Constant-velocity extrapolation at `dt, 2dt, .., horizon` with speed and heading frozen.
pub fn predict_positions(state: &VehicleState, horizon: f64, dt: f64) -> Vec<Vec2> {
    let steps = (horizon / dt).round() as usize;
    let origin = state.position();
    let velocity = state.velocity();
    (1..=steps)
        .map(|k| origin + velocity * (k as f64 * dt))
        .collect()
}

/// Oriented-rectangle overlap between two vehicles.
pub fn check_collision(a: &VehicleState, b: &VehicleState) -> bool {
    let reach = 0.5 * (a.length.hypot(a.width) + b.length.hypot(b.width));
    if a.position().distance(b.position()) > reach {
        return false;
    }
    rectangles_intersect(&a.corners(), &b.corners())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn standstill_is_a_fixed_point() {
        let s = VehicleState::new(1, 3.0, -2.0, 0.0, 0.4);
        for steer in [-1.0, 0.0, 0.5] {
            let n = bicycle_step(&s, 0.0, steer, 1.0 / 15.0);
            assert_eq!(n, s);
        }
    }

    #[test]
    fn straight_line_motion() {
        let s = VehicleState::new(1, 0.0, 0.0, 5.0, 0.0);
        let n = bicycle_step(&s, 0.0, 0.0, 1.0);
        assert_eq!((n.x, n.y, n.heading, n.speed), (5.0, 0.0, 0.0, 5.0));
    }

    #[test]
    fn braking_saturates_at_zero() {
        let s = VehicleState::new(1, 0.0, 0.0, 0.3, 0.0);
        let n = bicycle_step(&s, -9.0, 0.0, 1.0);
        assert_eq!(n.speed, 0.0);
    }

    #[test]
    fn heading_stays_wrapped() {
        let mut s = VehicleState::new(1, 0.0, 0.0, 10.0, PI - 0.01);
        for _ in 0..100 {
            s = bicycle_step(&s, 0.0, MAX_STEERING_ANGLE, 0.1);
            assert!(s.heading > -PI && s.heading <= PI);
        }
    }

    // Fine-step integration of the continuous model is the oracle for the
    // coarse physics step.
    #[test]
    fn coarse_step_tracks_fine_integration() {
        let start = VehicleState::new(1, 0.0, 0.0, 5.0, 0.0);
        let mut coarse = start.clone();
        for _ in 0..15 {
            coarse = bicycle_step(&coarse, 0.0, 0.2, 1.0 / 15.0);
        }
        let beta = (0.5 * 0.2f64.tan()).atan();
        let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
        let h = 1e-4;
        for _ in 0..10_000 {
            x += 5.0 * (psi + beta).cos() * h;
            y += 5.0 * (psi + beta).sin() * h;
            psi += 5.0 / 5.0 * beta.sin() * h;
        }
        let err = (coarse.x - x).hypot(coarse.y - y);
        assert!(err < 0.05, "pose error {err}");
    }

    #[test]
    fn predictions_examples() {
        let still = VehicleState::new(1, 3.0, 4.0, 0.0, 1.0);
        assert!(predict_positions(&still, 3.0, 0.25)
            .iter()
            .all(|p| *p == still.position()));

        let s = VehicleState::new(1, 0.0, 0.0, 4.0, 0.0);
        assert_eq!(
            predict_positions(&s, 3.0, 1.0),
            vec![Vec2::new(4.0, 0.0), Vec2::new(8.0, 0.0), Vec2::new(12.0, 0.0)]
        );

        let north = VehicleState::new(1, 1.0, 0.0, 2.0, FRAC_PI_2);
        let pts = predict_positions(&north, 3.0, 0.5);
        assert_eq!(pts.len(), 6);
        for (k, p) in pts.iter().enumerate() {
            assert!((p.x - 1.0).abs() < 1e-12);
            assert!((p.y - (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn collision_examples() {
        let a = VehicleState::new(1, 0.0, 0.0, 0.0, 0.3);
        assert!(check_collision(&a, &a.clone()));
        let far = VehicleState::new(2, 100.0, 0.0, 0.0, 0.0);
        assert!(!check_collision(&a, &far));
    }
}
