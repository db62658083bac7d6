use rand::Rng;

use super::{ReplayBuffer, TrainConfig, Transition};
use crate::nn::{Adam, NnError, QModel, Tape, NUM_ACTIONS};
use crate::obs::Observation;

/// Epsilon-greedy action: uniform with probability `eps`, else the greedy action
/// (lowest index on ties).
pub fn select_action<R: Rng>(model: &QModel, obs: &Observation, eps: f64, rng: &mut R) -> Result<usize, NnError> {
    if rng.gen::<f64>() < eps {
        return Ok(rng.gen_range(0..NUM_ACTIONS));
    }
    Ok(model.q_values(obs)?.argmax())
}

/// `r` for terminal transitions, `r + gamma * max_a' Q_target(s', a')` otherwise.
/// The next observation of a terminal transition is never evaluated.
pub fn td_targets(batch: &[&Transition], target: &QModel, gamma: f64) -> Result<Vec<f64>, NnError> {
    let live: Vec<&Observation> = batch.iter().filter(|t| !t.terminal).map(|t| &t.next_obs).collect();
    let mut next = target.q_values_batch(&live)?.into_iter();
    Ok(batch
        .iter()
        .map(|t| {
            if t.terminal {
                t.reward
            } else {
                let q = next.next().expect("one output per live transition").values;
                t.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect())
}

/// Smooth-L1 loss (threshold 1) of a residual and its derivative.
pub fn huber(residual: f64) -> (f64, f64) {
    if residual.abs() < 1.0 {
        (0.5 * residual * residual, residual)
    } else {
        (residual.abs() - 0.5, residual.signum())
    }
}

/// Online network, target network and optimiser state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: QModel,
    pub target: QModel,
    optimizer: Adam,
    gamma: f64,
    batch_size: usize,
    target_sync: u64,
    gradient_steps: u64,
    grads: Vec<f64>,
}

impl Learner {
    pub fn new(model: QModel, config: &TrainConfig) -> Self {
        let n = model.param_count();
        Self {
            target: model.clone(),
            online: model,
            optimizer: Adam::new(config.optimizer, n),
            gamma: config.gamma,
            batch_size: config.batch_size,
            target_sync: config.target_sync,
            gradient_steps: 0,
            grads: vec![0.0; n],
        }
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    /// One Adam step on a uniformly sampled batch. Returns `None` while the buffer
    /// holds fewer than a batch of transitions. A non-finite loss is returned without
    /// touching the parameters.
    pub fn train_step<R: Rng>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<f64>, NnError> {
        let Some(batch) = buffer.sample(rng, self.batch_size) else {
            return Ok(None);
        };
        let loss = self.update(&batch)?;
        Ok(Some(loss))
    }

    /// One Adam step on the given batch; returns its mean smooth-L1 loss.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<f64, NnError> {
        let targets = td_targets(batch, &self.target, self.gamma)?;
        let mut tape = Tape::new();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(batch.len());
        for (t, y) in batch.iter().zip(&targets) {
            let q = match self.online.forward(&t.obs, &mut tape) {
                Ok(out) => out.values,
                Err(NnError::Numerical(_)) => return Ok(f64::NAN),
                Err(e) => return Err(e),
            };
            let (l, g) = huber(q[t.action] - y);
            loss += l * scale;
            let mut up = [0.0; NUM_ACTIONS];
            up[t.action] = g * scale;
            upstream.push(up);
        }
        if !loss.is_finite() {
            return Ok(loss);
        }
        self.grads.fill(0.0);
        self.online.backward_into(&mut tape, &upstream, &mut self.grads)?;
        self.optimizer.step(self.online.params_mut(), &self.grads);
        self.gradient_steps += 1;
        if self.gradient_steps.is_multiple_of(self.target_sync) {
            self.target.copy_params_from(&self.online)?;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchConfig, ModelKind};
    use crate::obs::{GridCell, GridObservation, ListObservation, LIST_ROWS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn list_obs(x: f64) -> Observation {
        Observation::List(ListObservation::new(vec![[1.0, x, 0.0, 0.2, 0.0, 1.0, 0.0]]).padded(LIST_ROWS))
    }

    fn transition(reward: f64, terminal: bool, next: Observation) -> Transition {
        Transition {
            obs: list_obs(0.1),
            action: 2,
            reward,
            next_obs: next,
            terminal,
        }
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut model = QModel::zeroed(ModelKind::Fcn, &ArchConfig::default()).unwrap();
        let n = model.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        model.params_mut()[n - 3..].copy_from_slice(&[0.1, 0.9, 0.3]);
        assert_eq!(select_action(&model, &list_obs(0.0), 0.0, &mut rng).unwrap(), 1);
        model.params_mut()[n - 3..].copy_from_slice(&[0.5, 0.5, 0.1]);
        assert_eq!(select_action(&model, &list_obs(0.0), 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn uniform_exploration() {
        let model = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&model, &list_obs(0.0), 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn target_arithmetic() {
        let mut target = QModel::zeroed(ModelKind::Fcn, &ArchConfig::default()).unwrap();
        let n = target.param_count();
        target.params_mut()[n - 3..].copy_from_slice(&[2.0, -1.0, 0.5]);
        let live = transition(1.0, false, list_obs(0.3));
        let crash = transition(-5.0, true, list_obs(0.3));
        let y = td_targets(&[&live, &crash], &target, 0.95).unwrap();
        assert!((y[0] - 2.9).abs() < 1e-12);
        assert_eq!(y[1], -5.0);
        assert_eq!(td_targets(&[&live], &target, 0.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn terminal_next_observation_is_never_read() {
        let target = QModel::new(ModelKind::Cnn, &ArchConfig::default(), 2).unwrap();
        let poisoned = Observation::Grid(GridObservation::from_cells(vec![GridCell {
            ix: 0,
            iy: 0,
            channels: [f64::NAN; 7],
        }]));
        let t = Transition {
            obs: poisoned.clone(),
            action: 0,
            reward: -5.0,
            next_obs: poisoned.clone(),
            terminal: true,
        };
        assert_eq!(td_targets(&[&t], &target, 0.95).unwrap(), vec![-5.0]);
        let live = Transition { terminal: false, ..t };
        assert!(td_targets(&[&live], &target, 0.95).is_err());
    }

    #[test]
    fn zero_residual_is_a_fixed_point() {
        let mut model = QModel::zeroed(ModelKind::Fcn, &ArchConfig::default()).unwrap();
        let n = model.param_count();
        model.params_mut()[n - 1] = 1.0;
        let t = transition(1.0, true, list_obs(0.0));
        let mut learner = Learner::new(model.clone(), &TrainConfig::default());
        let loss = learner.update(&[&t, &t]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(learner.online.params(), model.params());
    }

    #[test]
    fn bandit_converges_to_reward() {
        let config = TrainConfig {
            batch_size: 8,
            replay_capacity: 8,
            ..TrainConfig::default()
        };
        let model = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 3).unwrap();
        let mut learner = Learner::new(model, &config);
        let mut buffer = ReplayBuffer::new(8);
        for _ in 0..8 {
            buffer.push(transition(1.0, true, list_obs(0.0)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2_000 {
            learner.train_step(&buffer, &mut rng).unwrap().unwrap();
        }
        let q = learner.online.q_values(&list_obs(0.1)).unwrap().values;
        assert!((q[2] - 1.0).abs() < 1e-2, "{q:?}");
    }

    #[test]
    fn target_syncs_on_schedule() {
        let config = TrainConfig {
            batch_size: 2,
            target_sync: 3,
            ..TrainConfig::default()
        };
        let model = QModel::new(ModelKind::Fcn, &ArchConfig::default(), 5).unwrap();
        let mut learner = Learner::new(model, &config);
        let a = transition(1.0, false, list_obs(0.5));
        let b = transition(0.0, true, list_obs(0.5));
        let mut synced = learner.online.clone();
        for step in 1..=9u64 {
            learner.update(&[&a, &b]).unwrap();
            if step % 3 == 0 {
                assert_eq!(learner.target.params(), learner.online.params());
                synced = learner.online.clone();
            } else {
                assert_ne!(learner.target.params(), learner.online.params());
                assert_eq!(learner.target.params(), synced.params());
            }
        }
    }

    #[test]
    fn huber_pieces() {
        assert_eq!(huber(0.5), (0.125, 0.5));
        assert_eq!(huber(-3.0), (2.5, -1.0));
    }
}
