use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::learner::select_action;
use super::{DqnError, EpisodeMetrics, Learner, ReplayBuffer, TrainConfig, Transition};
use crate::nn::{ArchConfig, ModelKind, QModel};
use crate::obs::{grid_observation, list_observation, FeatureRanges, Observation};
use crate::sim::{EgoAction, EnvConfig, IntersectionEnv, Scene};

/// Independent seed for stream `stream`, item `index` of a run seeded with `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_AGENT: u64 = 1;
pub(crate) const STREAM_TRAIN_EPISODE: u64 = 2;
pub(crate) const STREAM_EVAL_EPISODE: u64 = 3;

/// The observation a model of `kind` consumes.
pub fn encode(scene: &Scene, kind: ModelKind) -> Observation {
    let ranges = FeatureRanges::default();
    if kind.uses_grid() {
        Observation::Grid(grid_observation(scene, &ranges))
    } else {
        Observation::List(list_observation(scene, kind.pads_list(), &ranges))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: QModel,
    pub metrics: Vec<EpisodeMetrics>,
    pub gradient_steps: u64,
}

/// Trains a fresh model of `kind` for `config.episodes` episodes, one gradient step per
/// decision once the replay buffer holds a batch. `on_episode` sees each episode's
/// metrics as soon as it ends. Deterministic given the seeds in the configs.
pub fn run_training(
    env_config: &EnvConfig,
    kind: ModelKind,
    arch: &ArchConfig,
    config: &TrainConfig,
    mut on_episode: impl FnMut(&EpisodeMetrics),
) -> Result<TrainingRun, DqnError> {
    config.validate()?;
    let env = IntersectionEnv::new(env_config.clone())?;
    let model = QModel::new(kind, arch, derive_seed(config.seed, STREAM_INIT, 0))?;
    let mut learner = Learner::new(model, config);
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_AGENT, 0));
    let mut decisions: u64 = 0;
    let mut metrics = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        let mut scene = env.reset(derive_seed(config.seed, STREAM_TRAIN_EPISODE, episode as u64));
        let mut obs = encode(&scene, kind);
        let epsilon = config.epsilon.value(decisions);
        let (mut total, mut length, mut speed_sum) = (0.0, 0usize, 0.0);
        let (mut loss_sum, mut losses) = (0.0, 0usize);
        while !scene.terminal {
            let eps = config.epsilon.value(decisions);
            let action = select_action(&learner.online, &obs, eps, &mut rng)?;
            let outcome = env.step(&scene, EgoAction::from_index(action).expect("valid action index"))?;
            let next_obs = encode(&outcome.next_scene, kind);
            buffer.push(Transition {
                obs,
                action,
                reward: outcome.reward,
                next_obs: next_obs.clone(),
                terminal: outcome.terminal,
            });
            decisions += 1;
            total += outcome.reward;
            length += 1;
            speed_sum += outcome.mean_ego_speed;
            if let Some(loss) = learner.train_step(&buffer, &mut rng)? {
                if !loss.is_finite() {
                    return Err(DqnError::NonFiniteLoss {
                        episode,
                        step: learner.gradient_steps(),
                    });
                }
                loss_sum += loss;
                losses += 1;
            }
            scene = outcome.next_scene;
            obs = next_obs;
        }
        let m = EpisodeMetrics {
            episode,
            episode_return: total,
            length,
            avg_speed: if length > 0 { speed_sum / length as f64 } else { 0.0 },
            epsilon,
            mean_loss: (losses > 0).then(|| loss_sum / losses as f64),
        };
        on_episode(&m);
        metrics.push(m);
    }
    let gradient_steps = learner.gradient_steps();
    Ok(TrainingRun {
        model: learner.online,
        metrics,
        gradient_steps,
    })
}
