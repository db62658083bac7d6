//! Paired study of agents trained with and without ego right of way.

use std::collections::HashMap;
use std::path::Path;

use crossroads_core::dqn::{derive_seed, encode, MeanCi};
use crossroads_core::nn::QModel;
use crossroads_core::sim::geometry::Vec2;
use crossroads_core::sim::{EgoAction, EnvConfig, IntersectionEnv, LaneId, Road, TrajectoryRow, VehicleId};
use serde::Serialize;

use crate::artifacts::write_atomic;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::train::train_or_reuse;

/// Seed stream for the frozen evaluation scenes, distinct from training and evaluation streams.
const STREAM_PRIORITY_SCENES: u64 = 4;
/// Two connector paths closer than this are treated as conflicting.
pub const CONFLICT_DISTANCE: f64 = 2.0;
const PATH_SAMPLE_SPACING: f64 = 0.5;

pub const REPORT_FILE: &str = "priority_study.json";

/// Initial-scene seeds shared by both arms.
pub fn frozen_scene_seeds(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(seed, STREAM_PRIORITY_SCENES, i)).collect()
}

fn connector(route: &[LaneId]) -> Option<LaneId> {
    route.iter().copied().find(|l| matches!(l, LaneId::Connector { .. }))
}

fn sample_lane(road: &Road, id: LaneId) -> Vec<Vec2> {
    let lane = road.lane(id);
    let n = (lane.length / PATH_SAMPLE_SPACING).ceil().max(1.0) as usize;
    (0..=n).map(|k| lane.position(lane.length * k as f64 / n as f64, 0.0)).collect()
}

/// Whether two routes through the intersection cross or merge.
pub fn routes_conflict(road: &Road, a: &[LaneId], b: &[LaneId]) -> bool {
    let (Some(LaneId::Connector { from: fa, .. }), Some(LaneId::Connector { from: fb, .. })) =
        (connector(a), connector(b))
    else {
        return false;
    };
    if fa == fb {
        return false;
    }
    let pa = sample_lane(road, connector(a).unwrap());
    let pb = sample_lane(road, connector(b).unwrap());
    pa.iter().any(|p| pb.iter().any(|q| p.distance(*q) < CONFLICT_DISTANCE))
}

/// Route distance at which a vehicle on `route` passes the middle of its connector.
fn centre_progress(road: &Road, route: &[LaneId]) -> f64 {
    let k = route.iter().position(|l| matches!(l, LaneId::Connector { .. })).unwrap_or(0);
    road.route_progress(route, k, 0.5 * road.lane(route[k]).length)
}

/// Distance along `route` of point `p`, taken on the lane that holds it most tightly.
pub fn progress_on_route(road: &Road, route: &[LaneId], p: Vec2) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for (k, id) in route.iter().enumerate() {
        let lane = road.lane(*id);
        let (s, lat) = lane.local_coordinates(p);
        let overshoot = (-s).max(s - lane.length).max(0.0);
        let score = lat.abs() + overshoot;
        if score < best.0 {
            best = (score, road.route_progress(route, k, s.clamp(0.0, lane.length)));
        }
    }
    best.1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneOutcome {
    pub seed: u64,
    pub episode_return: f64,
    pub mean_speed: f64,
    pub crashed: bool,
    /// Ego speed when it passed the intersection centre, if it did.
    pub crossing_speed: Option<f64>,
    /// A conflicting vehicle reached the centre before the ego.
    pub yielded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub ego_priority: bool,
    pub mean_speed: MeanCi,
    pub mean_return: MeanCi,
    pub crossing_speed: MeanCi,
    pub yield_frequency: f64,
    pub crash_rate: f64,
    pub scenes: Vec<SceneOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorityReport {
    pub priority: ArmReport,
    pub non_priority: ArmReport,
}

impl PriorityReport {
    pub fn crossing_speed_holds(&self) -> bool {
        self.priority.crossing_speed.mean >= self.non_priority.crossing_speed.mean
    }

    pub fn yield_frequency_holds(&self) -> bool {
        self.non_priority.yield_frequency >= self.priority.yield_frequency
    }
}

/// Greedy rollout of `model` from one initial scene, tracking centre passages.
pub fn run_scene(model: &QModel, env: &IntersectionEnv, seed: u64) -> Result<SceneOutcome, CliError> {
    let mut scene = env.reset(seed);
    let road = scene.road.clone();
    let ego_route = scene.ego.route.clone();
    let mut routes: HashMap<VehicleId, (Vec<LaneId>, f64, bool)> = HashMap::new();
    for v in scene.all_vehicles() {
        let conflicting = v.id != scene.ego.id && routes_conflict(&road, &ego_route, &v.route);
        routes.insert(v.id, (v.route.clone(), centre_progress(&road, &v.route), conflicting));
    }

    let mut ego_cross: Option<(f64, f64)> = None;
    let mut first_conflict_cross: Option<f64> = None;
    let (mut total, mut speed_sum, mut decisions, mut crashed) = (0.0, 0.0, 0usize, false);
    let mut log: Vec<TrajectoryRow> = Vec::new();
    while !scene.terminal {
        let action = model.q_values(&encode(&scene, model.kind()))?.argmax();
        log.clear();
        let outcome = env.step_logged(&scene, EgoAction::from_index(action).expect("valid action"), &mut log)?;
        for row in &log {
            let Some((route, centre, conflicting)) = routes.get(&row.vehicle_id) else {
                continue;
            };
            let passed = progress_on_route(&road, route, Vec2::new(row.x, row.y)) >= *centre;
            if !passed {
                continue;
            }
            if row.is_ego {
                ego_cross.get_or_insert((row.time, row.v));
            } else if *conflicting && first_conflict_cross.is_none() {
                first_conflict_cross = Some(row.time);
            }
        }
        total += outcome.reward;
        speed_sum += outcome.mean_ego_speed;
        decisions += 1;
        crashed = outcome.crashed;
        scene = outcome.next_scene;
    }
    let yielded = match (first_conflict_cross, ego_cross) {
        (Some(t), Some((te, _))) => t < te,
        (Some(_), None) => true,
        (None, _) => false,
    };
    Ok(SceneOutcome {
        seed,
        episode_return: total,
        mean_speed: speed_sum / decisions.max(1) as f64,
        crashed,
        crossing_speed: ego_cross.map(|(_, v)| v),
        yielded,
    })
}

pub fn evaluate_arm(model: &QModel, env_config: &EnvConfig, scene_seeds: &[u64]) -> Result<ArmReport, CliError> {
    if scene_seeds.is_empty() {
        return Err(CliError::Usage("priority study needs at least one scene".into()));
    }
    let env = IntersectionEnv::new(env_config.clone())?;
    let scenes = scene_seeds
        .iter()
        .map(|&s| run_scene(model, &env, s))
        .collect::<Result<Vec<_>, _>>()?;
    let n = scenes.len() as f64;
    let col = |f: &dyn Fn(&SceneOutcome) -> f64| scenes.iter().map(f).collect::<Vec<_>>();
    let crossings: Vec<f64> = scenes.iter().filter_map(|s| s.crossing_speed).collect();
    Ok(ArmReport {
        ego_priority: env_config.ego_priority,
        mean_speed: MeanCi::from_samples(&col(&|s| s.mean_speed)),
        mean_return: MeanCi::from_samples(&col(&|s| s.episode_return)),
        crossing_speed: MeanCi::from_samples(&crossings),
        yield_frequency: scenes.iter().filter(|s| s.yielded).count() as f64 / n,
        crash_rate: scenes.iter().filter(|s| s.crashed).count() as f64 / n,
        scenes,
    })
}

/// Evaluates a priority-trained and a non-priority-trained model, each in its own
/// environment, on the same initial scenes.
pub fn compare_arms(
    priority_model: &QModel,
    non_priority_model: &QModel,
    config: &ExperimentConfig,
    scene_seeds: &[u64],
) -> Result<PriorityReport, CliError> {
    let (with, without) = arm_configs(config);
    Ok(PriorityReport {
        priority: evaluate_arm(priority_model, &with.env_config(), scene_seeds)?,
        non_priority: evaluate_arm(non_priority_model, &without.env_config(), scene_seeds)?,
    })
}

/// The configuration pair differing only in `env.ego_priority`.
pub fn arm_configs(config: &ExperimentConfig) -> (ExperimentConfig, ExperimentConfig) {
    let mut with = config.clone();
    with.env.ego_priority = true;
    let mut without = config.clone();
    without.env.ego_priority = false;
    (with, without)
}

/// Trains (or reuses) both arms for the first configured seed and writes the report.
pub fn cmd_priority_study(config: &ExperimentConfig, out: &Path, quiet: bool) -> Result<PriorityReport, CliError> {
    let seed = *config
        .env
        .seeds
        .first()
        .ok_or_else(|| CliError::Usage("env.seeds is empty".into()))?;
    let (with, without) = arm_configs(config);
    let priority = train_or_reuse(&with, seed, &out.join("priority"), quiet)?;
    let non_priority = train_or_reuse(&without, seed, &out.join("non_priority"), quiet)?;
    let scenes = frozen_scene_seeds(config.evaluation.seed, config.evaluation.episodes);
    let report = compare_arms(&priority.model, &non_priority.model, config, &scenes)?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::io(REPORT_FILE, e))?;
    write_atomic(&out.join(REPORT_FILE), &json)?;
    Ok(report)
}
