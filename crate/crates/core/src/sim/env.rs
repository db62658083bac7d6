use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EnvConfig;
use super::control::steering_for_route;
use super::idm::{idm_acceleration, LeaderGap};
use super::log::TrajectoryRow;
use super::road::{Arm, LaneId, Road, Turn};
use super::vehicle::{bicycle_step, check_collision, VehicleId, VehicleState};
use super::yielding::resolve_among;
use super::SimError;

pub const EGO_ID: VehicleId = 0;

/// Longitudinal decision of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EgoAction {
    Slower = 0,
    NoOp = 1,
    Faster = 2,
}

impl EgoAction {
    pub const ALL: [EgoAction; 3] = [EgoAction::Slower, EgoAction::NoOp, EgoAction::Faster];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EgoAction> {
        Self::ALL.get(i).copied()
    }
}

/// Full simulator state: the MDP state seen by the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ego: VehicleState,
    pub others: Vec<VehicleState>,
    /// Simulated time; always `physics_steps * dt`.
    pub time: f64,
    pub physics_steps: u64,
    pub decisions: u32,
    pub ego_speed_index: usize,
    /// Right of way per arm, indexed by `Arm::index`.
    pub priority: [bool; 4],
    pub crashed: bool,
    pub arrived: bool,
    pub terminal: bool,
    pub road: Arc<Road>,
}

impl Scene {
    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        std::iter::once(&self.ego)
            .chain(self.others.iter())
            .find(|v| v.id == id)
    }

    pub fn all_vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        std::iter::once(&self.ego).chain(self.others.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_scene: Scene,
    pub reward: f64,
    pub terminal: bool,
    pub crashed: bool,
    pub arrived: bool,
    /// Ego speed averaged over the physics sub-steps of this decision.
    pub mean_ego_speed: f64,
}

/// -5 on collision, 1 at (near) maximum speed, 0 otherwise.
pub fn compute_reward(crashed: bool, speed: f64, v_max: f64, tolerance: f64) -> f64 {
    if crashed {
        -5.0
    } else if speed >= v_max - tolerance {
        1.0
    } else {
        0.0
    }
}

/// Scene for `seed` under `config`; see [`IntersectionEnv::reset`].
pub fn env_reset(seed: u64, config: &EnvConfig) -> Result<Scene, SimError> {
    Ok(IntersectionEnv::new(config.clone())?.reset(seed))
}

#[derive(Debug, Clone)]
pub struct IntersectionEnv {
    config: EnvConfig,
    road: Arc<Road>,
}

impl IntersectionEnv {
    pub fn new(config: EnvConfig) -> Result<Self, SimError> {
        config.validate()?;
        let road = Arc::new(Road::new(config.road));
        Ok(Self { config, road })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn road(&self) -> &Arc<Road> {
        &self.road
    }

    pub fn priority_map(&self) -> [bool; 4] {
        let ego_road = |a: Arm| a == self.config.ego_arm || a == self.config.ego_arm.exit_for(Turn::Straight);
        let mut map = [false; 4];
        for arm in Arm::ALL {
            map[arm.index()] = ego_road(arm) == self.config.ego_priority;
        }
        map
    }

    /// Right-of-way rank of a route: priority road first, then non-left turns.
    pub fn priority_rank(priority: &[bool; 4], from: Arm, to: Arm) -> i32 {
        let on_priority = priority[from.index()] as i32;
        let not_left = (from.turn_to(to) != Some(Turn::Left)) as i32;
        2 * on_priority + not_left
    }

    /// Deterministic initial scene for `seed`.
    pub fn reset(&self, seed: u64) -> Scene {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let priority = self.priority_map();
        let layout = self.road.layout();

        let ego_to = cfg.ego_arm.exit_for(cfg.ego_destination);
        let ego_route = self.road.route(cfg.ego_arm, ego_to);
        let jitter = if cfg.ego_spawn_jitter > 0.0 {
            rng.gen_range(-cfg.ego_spawn_jitter..=cfg.ego_spawn_jitter)
        } else {
            0.0
        };
        let ego_s = layout.approach_length - cfg.ego_spawn_distance + jitter;
        let ego = self.spawn_on(
            EGO_ID,
            ego_route,
            ego_s,
            cfg.ego_speeds[cfg.ego_initial_speed_index],
            Self::priority_rank(&priority, cfg.ego_arm, ego_to),
        );

        let count = rng.gen_range(cfg.min_vehicles..=cfg.max_vehicles);
        let mut others: Vec<VehicleState> = Vec::with_capacity(count);
        let mut next_id = 1;
        let mut attempts = 0;
        while others.len() < count && attempts < 10_000 {
            attempts += 1;
            let from = Arm::from_index(rng.gen_range(0..4));
            let turn = [Turn::Left, Turn::Straight, Turn::Right][rng.gen_range(0..3)];
            let to = from.exit_for(turn);
            let s = rng.gen_range(0.0..layout.approach_length);
            let speed = if cfg.spawn_speed_max > cfg.spawn_speed_min {
                rng.gen_range(cfg.spawn_speed_min..cfg.spawn_speed_max)
            } else {
                cfg.spawn_speed_min
            };
            let candidate = self.spawn_on(
                next_id,
                self.road.route(from, to),
                s,
                speed,
                Self::priority_rank(&priority, from, to),
            );
            let lane = LaneId::Incoming(from);
            let crowded = std::iter::once(&ego).chain(others.iter()).any(|v| {
                check_collision(v, &candidate)
                    || (v.current_lane() == Some(lane)
                        && v.position().distance(candidate.position()) < cfg.spawn_gap)
            });
            if !crowded {
                others.push(candidate);
                next_id += 1;
            }
        }

        Scene {
            ego,
            others,
            time: 0.0,
            physics_steps: 0,
            decisions: 0,
            ego_speed_index: cfg.ego_initial_speed_index,
            priority,
            crashed: false,
            arrived: false,
            terminal: false,
            road: Arc::clone(&self.road),
        }
    }

    fn spawn_on(&self, id: VehicleId, route: Vec<LaneId>, s: f64, speed: f64, rank: i32) -> VehicleState {
        let lane = self.road.lane(route[0]);
        let p = lane.position(s, 0.0);
        VehicleState::new(id, p.x, p.y, speed, lane.heading_at(s))
            .with_route(route)
            .with_priority(rank)
    }

    pub fn step(&self, scene: &Scene, action: EgoAction) -> Result<StepOutcome, SimError> {
        self.step_inner(scene, action, None)
    }

    /// Like [`step`](Self::step), appending one row per vehicle per physics step to `log`.
    pub fn step_logged(
        &self,
        scene: &Scene,
        action: EgoAction,
        log: &mut Vec<TrajectoryRow>,
    ) -> Result<StepOutcome, SimError> {
        self.step_inner(scene, action, Some(log))
    }

    fn step_inner(
        &self,
        scene: &Scene,
        action: EgoAction,
        mut log: Option<&mut Vec<TrajectoryRow>>,
    ) -> Result<StepOutcome, SimError> {
        if scene.terminal {
            return Err(SimError::SteppedTerminal);
        }
        let cfg = &self.config;
        let mut next = scene.clone();
        let top = cfg.ego_speeds.len() - 1;
        next.ego_speed_index = match action {
            EgoAction::Slower => scene.ego_speed_index.saturating_sub(1),
            EgoAction::NoOp => scene.ego_speed_index,
            EgoAction::Faster => (scene.ego_speed_index + 1).min(top),
        };

        let mut crashed = next.others.iter().any(|v| check_collision(&next.ego, v));
        let mut arrived = false;
        let mut speed_sum = 0.0;
        let mut substeps = 0u32;
        while !crashed && !arrived && substeps < cfg.substeps {
            let (c, a) = self.physics_step(&mut next, log.as_deref_mut());
            crashed = c;
            arrived = a;
            speed_sum += next.ego.speed;
            substeps += 1;
        }

        next.decisions += 1;
        next.crashed = crashed;
        next.arrived = arrived;
        next.terminal = crashed || arrived || next.decisions >= cfg.horizon;
        let reward = compute_reward(crashed, next.ego.speed, cfg.reward_speed, cfg.reward_speed_tolerance);
        let mean_ego_speed = if substeps > 0 {
            speed_sum / substeps as f64
        } else {
            next.ego.speed
        };
        Ok(StepOutcome {
            terminal: next.terminal,
            crashed,
            arrived,
            reward,
            mean_ego_speed,
            next_scene: next,
        })
    }

    /// Advances every vehicle by one physics step. Returns (ego crashed, ego arrived).
    fn physics_step(&self, scene: &mut Scene, log: Option<&mut Vec<TrajectoryRow>>) -> (bool, bool) {
        let cfg = &self.config;
        let dt = cfg.physics_dt();
        let road = &*self.road;
        let braking = resolve_among(&scene.ego, &scene.others, &cfg.prediction);
        let lane_coords: Vec<(Option<LaneId>, f64)> = scene
            .all_vehicles()
            .map(|v| (v.current_lane(), lane_s(road, v)))
            .collect();

        let mut updated = Vec::with_capacity(scene.others.len());
        for (i, v) in scene.others.iter().enumerate() {
            let accel = if braking.contains(&v.id) {
                -cfg.idm.max_decel
            } else {
                let leader = find_leader(road, scene, &lane_coords, i + 1);
                idm_acceleration(v, leader, &cfg.idm)
            };
            let steer = steering_for_route(v, road);
            updated.push(bicycle_step(v, accel, steer, dt));
        }
        let target = cfg.ego_speeds[scene.ego_speed_index];
        let ego_accel =
            (cfg.ego_speed_gain * (target - scene.ego.speed)).clamp(-cfg.idm.max_decel, cfg.idm.max_accel);
        let ego_steer = steering_for_route(&scene.ego, road);
        scene.ego = bicycle_step(&scene.ego, ego_accel, ego_steer, dt);
        let ego_arrived = advance_lane(road, &mut scene.ego);

        updated.retain_mut(|v| !advance_lane(road, v));

        // Scripted-scripted collisions take both vehicles out of the scene.
        let mut wrecked = BTreeSet::new();
        for i in 0..updated.len() {
            for j in (i + 1)..updated.len() {
                if check_collision(&updated[i], &updated[j]) {
                    wrecked.insert(updated[i].id);
                    wrecked.insert(updated[j].id);
                }
            }
        }
        updated.retain(|v| !wrecked.contains(&v.id));
        scene.others = updated;

        scene.physics_steps += 1;
        scene.time = scene.physics_steps as f64 * dt;
        let crashed = scene.others.iter().any(|v| check_collision(&scene.ego, v));

        if let Some(log) = log {
            for v in scene.all_vehicles() {
                log.push(TrajectoryRow {
                    time: scene.time,
                    vehicle_id: v.id,
                    x: v.x,
                    y: v.y,
                    v: v.speed,
                    psi: v.heading,
                    is_ego: v.id == scene.ego.id,
                    braking: braking.contains(&v.id),
                });
            }
        }
        (crashed, ego_arrived)
    }
}

fn lane_s(road: &Road, v: &VehicleState) -> f64 {
    v.current_lane()
        .map(|id| road.lane(id).local_coordinates(v.position()).0)
        .unwrap_or(0.0)
}

/// Moves the lane pointer forward past finished lanes; true once the route is done.
fn advance_lane(road: &Road, v: &mut VehicleState) -> bool {
    loop {
        let Some(id) = v.current_lane() else {
            return true;
        };
        let lane = road.lane(id);
        let (s, _) = lane.local_coordinates(v.position());
        if s < lane.length {
            return false;
        }
        if v.lane_index + 1 >= v.route.len() {
            return true;
        }
        v.lane_index += 1;
    }
}

/// Nearest vehicle ahead on the follower's own lane or on the next lanes of its route.
/// `follower` indexes `lane_coords`, where entry 0 is the ego.
fn find_leader(
    road: &Road,
    scene: &Scene,
    lane_coords: &[(Option<LaneId>, f64)],
    follower: usize,
) -> Option<LeaderGap> {
    let me = &scene.others[follower - 1];
    let (_, my_s) = lane_coords[follower];
    let mut offset = -my_s;
    for (k, lane_id) in me.route.iter().enumerate().skip(me.lane_index) {
        let mut best: Option<LeaderGap> = None;
        for (idx, v) in scene.all_vehicles().enumerate() {
            if idx == follower {
                continue;
            }
            let (their_lane, their_s) = lane_coords[idx];
            if their_lane != Some(*lane_id) || (k == me.lane_index && their_s <= my_s) {
                continue;
            }
            let gap = offset + their_s - 0.5 * (me.length + v.length);
            if best.is_none_or(|b| gap < b.gap) {
                best = Some(LeaderGap { gap, speed: v.speed });
            }
        }
        if best.is_some() {
            return best;
        }
        offset += road.lane(*lane_id).length;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn empty_config() -> EnvConfig {
        EnvConfig {
            min_vehicles: 0,
            max_vehicles: 0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(true, 9.0, 9.0, 0.1), -5.0);
        assert_eq!(compute_reward(true, 0.0, 9.0, 0.1), -5.0);
        assert_eq!(compute_reward(false, 9.0, 9.0, 0.1), 1.0);
        assert_eq!(compute_reward(false, 4.5, 9.0, 0.1), 0.0);
    }

    #[test]
    fn reset_is_deterministic() {
        let env = IntersectionEnv::new(EnvConfig::default()).unwrap();
        assert_eq!(env.reset(17), env.reset(17));
        assert_ne!(env.reset(17), env.reset(18));
    }

    #[test]
    fn zero_vehicle_config() {
        let scene = env_reset(3, &empty_config()).unwrap();
        assert!(scene.others.is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = EnvConfig::default();
        cfg.road.lane_width = 0.0;
        assert!(matches!(env_reset(0, &cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn default_spawn_is_within_range_and_collision_free() {
        let cfg = EnvConfig::default();
        for seed in 0..200 {
            let scene = env_reset(seed, &cfg).unwrap();
            let n = scene.others.len();
            assert!((cfg.min_vehicles..=cfg.max_vehicles).contains(&n), "seed {seed}: {n}");
            let all: Vec<_> = scene.all_vehicles().collect();
            for i in 0..all.len() {
                for j in (i + 1)..all.len() {
                    assert!(!check_collision(all[i], all[j]), "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn alone_and_faster_reaches_reward() {
        let mut cfg = empty_config();
        cfg.ego_initial_speed_index = 1;
        let env = IntersectionEnv::new(cfg).unwrap();
        let mut scene = env.reset(0);
        scene.ego.speed = 4.5;
        let mut rewarded = false;
        let mut last_speed = scene.ego.speed;
        while !scene.terminal {
            let out = env.step(&scene, EgoAction::Faster).unwrap();
            assert!(out.next_scene.ego.speed + 1e-12 >= last_speed);
            last_speed = out.next_scene.ego.speed;
            rewarded |= out.reward == 1.0;
            scene = out.next_scene;
        }
        assert!(rewarded);
        assert!(!scene.crashed);
    }

    #[test]
    fn alone_and_slower_from_standstill_stays_put() {
        let mut cfg = empty_config();
        cfg.ego_initial_speed_index = 0;
        let env = IntersectionEnv::new(cfg).unwrap();
        let mut scene = env.reset(0);
        scene.ego.speed = 0.0;
        let start = scene.ego.position();
        while !scene.terminal {
            let out = env.step(&scene, EgoAction::Slower).unwrap();
            assert_eq!(out.next_scene.ego.speed, 0.0);
            assert_eq!(out.reward, 0.0);
            scene = out.next_scene;
        }
        assert_eq!(scene.ego.position(), start);
        assert_eq!(scene.decisions, 13);
    }

    #[test]
    fn overlap_is_a_crash() {
        let env = IntersectionEnv::new(empty_config()).unwrap();
        let mut scene = env.reset(0);
        let mut blocker = scene.ego.clone();
        blocker.id = 1;
        blocker.speed = 0.0;
        scene.others.push(blocker);
        let out = env.step(&scene, EgoAction::NoOp).unwrap();
        assert!(out.crashed && out.terminal);
        assert_eq!(out.reward, -5.0);
    }

    #[test]
    fn terminal_scene_cannot_step() {
        let env = IntersectionEnv::new(empty_config()).unwrap();
        let mut scene = env.reset(0);
        scene.terminal = true;
        assert!(matches!(env.step(&scene, EgoAction::NoOp), Err(SimError::SteppedTerminal)));
    }

    #[test]
    fn timestamps_are_multiples_of_dt() {
        let env = IntersectionEnv::new(EnvConfig::default()).unwrap();
        let mut scene = env.reset(5);
        let dt = env.config().physics_dt();
        while !scene.terminal {
            scene = env.step(&scene, EgoAction::NoOp).unwrap().next_scene;
            assert_eq!(scene.time, scene.physics_steps as f64 * dt);
        }
    }

    #[test]
    fn follower_keeps_distance_behind_slow_leader() {
        let env = IntersectionEnv::new(empty_config()).unwrap();
        let mut scene = env.reset(0);
        // Park the ego far down the west exit, out of the way.
        scene.ego.x = -20.0;
        scene.ego.y = 2.0;
        scene.ego.heading = std::f64::consts::PI;
        scene.ego.lane_index = 2;
        scene.ego_speed_index = 0;
        scene.ego.speed = 0.0;
        let route = env.road().route(Arm::North, Arm::South);
        let lane = env.road().lane(route[0]);
        let mk = |id, s: f64, v| {
            let p = lane.position(s, 0.0);
            VehicleState::new(id, p.x, p.y, v, -FRAC_PI_2).with_route(route.clone())
        };
        scene.others = vec![mk(1, 40.0, 0.0), mk(2, 10.0, 9.0)];
        for _ in 0..8 {
            scene = env.step(&scene, EgoAction::NoOp).unwrap().next_scene;
            let d = scene.others[0].position().distance(scene.others[1].position());
            assert!(d > 5.0, "rear-end: {d}");
        }
    }
}
