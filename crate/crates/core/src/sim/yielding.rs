use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::config::PredictionParams;
use super::env::Scene;
use super::geometry::Vec2;
use super::vehicle::{predict_positions, VehicleId, VehicleState};

/// Scripted vehicles that must brake this step to give way.
///
/// Every pair of vehicles (the ego included) on different lanes is checked for a
/// predicted conflict: constant-velocity positions closer than half the summed
/// lengths at the same future instant. The lower `priority_rank` yields; equal ranks
/// yield the one farther from the intersection centre, then the lower id. A vehicle
/// already on its exit lane is clearing the junction and passes the obligation to
/// the other party. The ego is never placed in the set.
pub fn resolve_yielding(scene: &Scene, prediction: &PredictionParams) -> BTreeSet<VehicleId> {
    resolve_among(&scene.ego, &scene.others, prediction)
}

pub(crate) fn resolve_among(
    ego: &VehicleState,
    others: &[VehicleState],
    prediction: &PredictionParams,
) -> BTreeSet<VehicleId> {
    let mut braking = BTreeSet::new();
    if others.is_empty() {
        return braking;
    }
    let vehicles: Vec<&VehicleState> = std::iter::once(ego).chain(others.iter()).collect();
    let predictions: Vec<Vec<Vec2>> = vehicles
        .iter()
        .map(|v| predict_positions(v, prediction.horizon, prediction.step))
        .collect();

    for i in 0..vehicles.len() {
        for j in (i + 1)..vehicles.len() {
            let (a, b) = (vehicles[i], vehicles[j]);
            if a.current_lane().is_some() && a.current_lane() == b.current_lane() {
                continue;
            }
            let threshold = 0.5 * (a.length + b.length);
            let conflict = predictions[i]
                .iter()
                .zip(&predictions[j])
                .any(|(pa, pb)| pa.distance(*pb) < threshold);
            if !conflict {
                continue;
            }
            let mut yielder = yielding_party(a, b);
            let other = if yielder.id == a.id { b } else { a };
            if yielder.on_last_lane() && !other.on_last_lane() {
                yielder = other;
            }
            if yielder.id != ego.id {
                braking.insert(yielder.id);
            }
        }
    }
    braking
}

fn yielding_party<'a>(a: &'a VehicleState, b: &'a VehicleState) -> &'a VehicleState {
    match a.priority_rank.cmp(&b.priority_rank) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            let da = a.position().norm();
            let db = b.position().norm();
            if da > db {
                a
            } else if db > da {
                b
            } else if a.id < b.id {
                a
            } else {
                b
            }
        }
    }
}
