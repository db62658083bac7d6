use serde::{Deserialize, Serialize};

use super::training::{derive_seed, encode, STREAM_EVAL_EPISODE};
use super::DqnError;
use crate::nn::QModel;
use crate::sim::{EgoAction, EnvConfig, IntersectionEnv, Scene};

/// Sample mean with a 95% normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                half_width: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let half_width = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, half_width, n }
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub episode_return: f64,
    pub length: usize,
    pub avg_speed: f64,
    pub crashed: bool,
    pub arrived: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episode_return: MeanCi,
    pub length: MeanCi,
    pub avg_speed: MeanCi,
    pub crash_rate: f64,
    pub episodes: Vec<EpisodeSummary>,
}

impl EvalSummary {
    fn from_episodes(episodes: Vec<EpisodeSummary>) -> Self {
        let col = |f: fn(&EpisodeSummary) -> f64| episodes.iter().map(f).collect::<Vec<_>>();
        Self {
            episode_return: MeanCi::from_samples(&col(|e| e.episode_return)),
            length: MeanCi::from_samples(&col(|e| e.length as f64)),
            avg_speed: MeanCi::from_samples(&col(|e| e.avg_speed)),
            crash_rate: col(|e| f64::from(u8::from(e.crashed))).iter().sum::<f64>() / episodes.len() as f64,
            episodes,
        }
    }
}

/// Runs `policy` for `episodes` episodes whose scenes derive from `seed`.
pub fn evaluate_policy(
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&Scene) -> Result<EgoAction, DqnError>,
) -> Result<EvalSummary, DqnError> {
    if episodes == 0 {
        return Err(DqnError::Config("evaluation needs at least one episode".into()));
    }
    let env = IntersectionEnv::new(env_config.clone())?;
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let episode_seed = derive_seed(seed, STREAM_EVAL_EPISODE, e as u64);
        let mut scene = env.reset(episode_seed);
        let (mut total, mut length, mut speed) = (0.0, 0usize, 0.0);
        let (mut crashed, mut arrived) = (false, false);
        while !scene.terminal {
            let outcome = env.step(&scene, policy(&scene)?)?;
            total += outcome.reward;
            length += 1;
            speed += outcome.mean_ego_speed;
            crashed = outcome.crashed;
            arrived = outcome.arrived;
            scene = outcome.next_scene;
        }
        out.push(EpisodeSummary {
            seed: episode_seed,
            episode_return: total,
            length,
            avg_speed: if length > 0 { speed / length as f64 } else { 0.0 },
            crashed,
            arrived,
        });
    }
    Ok(EvalSummary::from_episodes(out))
}

/// Greedy evaluation of a trained model.
pub fn evaluate(model: &QModel, env_config: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalSummary, DqnError> {
    evaluate_policy(env_config, episodes, seed, |scene| {
        let a = model.q_values(&encode(scene, model.kind()))?.argmax();
        Ok(EgoAction::from_index(a).expect("valid action index"))
    })
}
