//! Low-level controllers shared by scripted traffic and the ego vehicle.

use super::geometry::{wrap_to_pi, Vec2};
use super::road::Road;
use super::vehicle::{VehicleState, MAX_STEERING_ANGLE};

const TAU_LATERAL: f64 = 0.6;
const TAU_HEADING: f64 = 0.2;
const TAU_PURSUIT: f64 = 0.1;
const MAX_HEADING_CORRECTION: f64 = std::f64::consts::FRAC_PI_4;

/// Cascade steering controller: lateral offset sets a heading correction around the
/// lane heading a short look-ahead down the route, heading error sets a yaw-rate on
/// top of the lane-curvature feed-forward, and the yaw-rate is inverted through the
/// bicycle model. The heading error is taken on the course (heading plus the
/// steady-state slip of the reference curvature), not on the body heading.
pub fn steering_for_route(state: &VehicleState, road: &Road) -> f64 {
    let Some(lane_id) = state.current_lane() else {
        return 0.0;
    };
    let lane = road.lane(lane_id);
    let (s, lateral) = lane.local_coordinates(state.position());
    let speed = not_zero(state.speed);

    let lookahead = s + state.speed * TAU_PURSUIT;
    let progress = road.route_progress(&state.route, state.lane_index, lookahead);
    let (future_lane, future_s) = road.lane_along_route(&state.route, progress);
    let future_heading = future_lane.heading_at(future_s);
    let curvature = future_lane.curvature();
    let slip_ff = (state.length * curvature).clamp(-1.0, 1.0).asin();

    let lateral_speed_command = -lateral / TAU_LATERAL;
    let heading_command = (lateral_speed_command / speed).clamp(-1.0, 1.0).asin();
    let heading_ref = future_heading
        + heading_command.clamp(-MAX_HEADING_CORRECTION, MAX_HEADING_CORRECTION);
    let yaw_rate = state.speed * curvature
        + wrap_to_pi(heading_ref - (state.heading + slip_ff)) / TAU_HEADING;

    // psi_dot = v / L * sin(beta), beta = atan(tan(delta) / 2)
    let slip = (state.length / speed * yaw_rate).clamp(-1.0, 1.0).asin();
    (2.0 * slip.tan())
        .atan()
        .clamp(-MAX_STEERING_ANGLE, MAX_STEERING_ANGLE)
}

fn not_zero(x: f64) -> f64 {
    const EPS: f64 = 1e-2;
    if x.abs() > EPS {
        x
    } else if x >= 0.0 {
        EPS
    } else {
        -EPS
    }
}

/// Lateral offset of `p` from the centreline of the vehicle's current lane.
pub fn lateral_error(state: &VehicleState, road: &Road, p: Vec2) -> f64 {
    state
        .current_lane()
        .map(|id| road.lane(id).local_coordinates(p).1)
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::road::{Arm, RoadLayout};
    use crate::sim::vehicle::bicycle_step;
    use std::f64::consts::FRAC_PI_2;

    fn northbound(x: f64, y: f64, speed: f64, road: &Road) -> VehicleState {
        VehicleState::new(1, x, y, speed, FRAC_PI_2).with_route(road.route(Arm::South, Arm::North))
    }

    #[test]
    fn centred_and_aligned_gives_zero() {
        let road = Road::new(RoadLayout::default());
        let v = northbound(2.0, -50.0, 5.0, &road);
        assert!(steering_for_route(&v, &road).abs() < 1e-12);
    }

    #[test]
    fn steers_back_towards_centreline() {
        let road = Road::new(RoadLayout::default());
        // Lane centre is x = 2; x = 1 is left of it when heading north.
        let left = northbound(1.0, -50.0, 5.0, &road);
        assert!(steering_for_route(&left, &road) < 0.0);
        let right = northbound(3.0, -50.0, 5.0, &road);
        assert!(steering_for_route(&right, &road) > 0.0);
    }

    #[test]
    fn closed_loop_converges_within_six_seconds() {
        let road = Road::new(RoadLayout::default());
        let mut v = northbound(1.0, -70.0, 5.0, &road);
        let dt = 1.0 / 15.0;
        let mut converged_at = None;
        for k in 0..(6 * 15) {
            let steer = steering_for_route(&v, &road);
            v = bicycle_step(&v, 0.0, steer, dt);
            let err = lateral_error(&v, &road, v.position()).abs();
            if err < 0.1 && converged_at.is_none() {
                converged_at = Some(k);
            }
            if converged_at.is_some() {
                assert!(err < 0.1, "left the band again at step {k}: {err}");
            }
        }
        assert!(converged_at.is_some());
    }

    #[test]
    fn follows_a_left_turn() {
        let road = Road::new(RoadLayout::default());
        let route = road.route(Arm::South, Arm::West);
        let mut v = VehicleState::new(1, 2.0, -30.0, 8.0, FRAC_PI_2).with_route(route.clone());
        let dt = 1.0 / 15.0;
        let mut worst = 0.0f64;
        for _ in 0..(8 * 15) {
            let steer = steering_for_route(&v, &road);
            v = bicycle_step(&v, 0.0, steer, dt);
            let lane = road.lane(v.route[v.lane_index]);
            let (s, lat) = lane.local_coordinates(v.position());
            worst = worst.max(lat.abs());
            if s >= lane.length && v.lane_index + 1 < v.route.len() {
                v.lane_index += 1;
            }
        }
        assert_eq!(v.lane_index, 2);
        assert!(worst < 1.0, "max lateral error {worst}");
    }
}
