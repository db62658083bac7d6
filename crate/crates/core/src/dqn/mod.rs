//! DQN training shared by all three Q-model families: replay memory, epsilon-greedy
//! behaviour, a periodically synced target network and smooth-L1 TD regression.

mod config;
mod evaluate;
mod learner;
mod metrics;
mod replay;
mod training;

pub use config::{EpsilonSchedule, TrainConfig};
pub use evaluate::{evaluate, evaluate_policy, EpisodeSummary, EvalSummary, MeanCi};
pub use learner::{huber, select_action, td_targets, Learner};
pub use metrics::{read_metrics_csv, write_metrics_csv, EpisodeMetrics, METRICS_HEADER};
pub use replay::{ReplayBuffer, Transition};
pub use training::{derive_seed, encode, run_training, TrainingRun};

use thiserror::Error;

use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at episode {episode}, gradient step {step}")]
    NonFiniteLoss { episode: usize, step: u64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("metrics file: {0}")]
    Metrics(String),
}
