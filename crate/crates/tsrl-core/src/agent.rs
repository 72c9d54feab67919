//! Double-DQN agent: epsilon-greedy acting, prioritized replay, Huber loss
//! on double-Q targets, Adam updates, and a periodically synced target net.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, FrameHistory};
use crate::error::{config_err, Result};
use crate::nn::{huber_loss, AdamConfig, AdamState};
use crate::qnet::{NetworkConfig, QNetwork};
use crate::replay::{PrioritizedReplay, ReplayConfig};
use crate::tensor::{Scalar, Tensor};

/// Training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon anneals linearly.
    pub epsilon_decay_steps: u64,
    /// Environment steps between target-network syncs.
    pub target_sync_every: u64,
    pub batch_size: usize,
    /// Buffered transitions required before training begins.
    pub train_start: usize,
    /// Environment steps between gradient steps.
    pub train_every: u64,
    pub huber_delta: f64,
    pub adam: AdamConfig,
    pub replay: ReplayConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            target_sync_every: 1_000,
            batch_size: 32,
            train_start: 1_000,
            train_every: 4,
            huber_delta: 1.0,
            adam: AdamConfig::default(),
            replay: ReplayConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return config_err(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return config_err(format!("{} must be in [0, 1], got {}", name, eps));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return config_err(format!(
                "epsilon_end {} must not exceed epsilon_start {}",
                self.epsilon_end, self.epsilon_start
            ));
        }
        if self.epsilon_decay_steps == 0 {
            return config_err("epsilon_decay_steps must be positive".to_string());
        }
        if self.batch_size == 0 {
            return config_err("batch_size must be positive".to_string());
        }
        if self.train_start < self.batch_size {
            return config_err(format!(
                "train_start {} must be at least batch_size {}",
                self.train_start, self.batch_size
            ));
        }
        if self.train_every == 0 {
            return config_err("train_every must be positive".to_string());
        }
        if !(self.huber_delta > 0.0) {
            return config_err(format!("huber_delta must be positive, got {}", self.huber_delta));
        }
        self.adam.validate()?;
        self.replay.validate()?;
        Ok(())
    }

    /// Exploration rate after `env_steps` steps, annealed linearly. Anchored
    /// at the floor so the saturated value is exactly `epsilon_end`.
    pub fn epsilon_at(&self, env_steps: u64) -> f64 {
        let frac = (env_steps as f64 / self.epsilon_decay_steps as f64).min(1.0);
        self.epsilon_end + (self.epsilon_start - self.epsilon_end) * (1.0 - frac)
    }
}

/// Position of a ChaCha stream, enough to reconstruct it exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    fn of(rng: &ChaCha8Rng) -> Self {
        RngSnapshot { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

fn argmax<E: Scalar>(row: &[E]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Greedy-policy episode returns: for episode `i` the environment is reset
/// with seed `base_seed + i` and rolled out with the network's argmax action.
pub fn greedy_returns<E: Scalar>(
    net: &QNetwork<E>,
    env: &mut dyn Environment,
    episodes: u64,
    base_seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return config_err("evaluate: episodes must be positive".to_string());
    }
    let frames = net.config().frames;
    let mut returns = Vec::with_capacity(episodes as usize);
    for ep in 0..episodes {
        let mut history = FrameHistory::new(frames)?;
        history.push(env.reset(Some(base_seed + ep)));
        let mut total = 0.0f64;
        loop {
            let window = history.window()?;
            let mut shape = vec![1];
            shape.extend_from_slice(window.shape());
            let q = net.forward(&window.cast::<E>().into_shape(&shape)?)?;
            let step = env.step(argmax(q.data()))?;
            total += step.reward as f64;
            history.push(step.frame);
            if step.done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Double-Q targets: the online network picks the next action, the target
/// network values it. `y_i = r_i + gamma * (1 - done_i) * Qt[i, argmax Qo[i]]`
/// with argmax ties broken toward the lowest action index.
pub fn double_q_targets<E: Scalar>(
    q_next_online: &Tensor<E>,
    q_next_target: &Tensor<E>,
    rewards: &[f32],
    dones: &[bool],
    gamma: f64,
) -> Result<Tensor<E>> {
    if q_next_online.rank() != 2 || q_next_online.shape() != q_next_target.shape() {
        return config_err(format!(
            "double-q: expected matching (B,A) value tables, got {:?} and {:?}",
            q_next_online.shape(),
            q_next_target.shape()
        ));
    }
    let (b, a) = (q_next_online.shape()[0], q_next_online.shape()[1]);
    if rewards.len() != b || dones.len() != b {
        return config_err(format!(
            "double-q: batch is {} but got {} rewards and {} done flags",
            b,
            rewards.len(),
            dones.len()
        ));
    }
    let g = E::from_f64_lossy(gamma);
    let mut y = Tensor::zeros(&[b]);
    for i in 0..b {
        let row = &q_next_online.data()[i * a..(i + 1) * a];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        let mut target = E::from_f64_lossy(rewards[i] as f64);
        if !dones[i] {
            target += g * q_next_target.data()[i * a + best];
        }
        y.data_mut()[i] = target;
    }
    Ok(y)
}

/// One line of training metrics, recorded when an episode finishes.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    /// Environment steps completed when the episode ended.
    pub step: u64,
    /// 1-based episode index.
    pub episode: u64,
    pub episode_return: f64,
    /// Mean loss over the episode's gradient steps; NaN before training starts.
    pub loss_mean: f64,
    pub epsilon: f64,
    pub wall_seconds: f64,
}

/// Callbacks from [`Agent::train_loop`].
pub trait TrainObserver<E: Scalar> {
    fn on_episode(&mut self, row: &MetricsRow) -> Result<()> {
        let _ = row;
        Ok(())
    }

    /// Called every `snapshot_every` steps with the live agent.
    fn on_snapshot(&mut self, step: u64, agent: &Agent<E>) -> Result<()> {
        let _ = (step, agent);
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NullObserver;

impl<E: Scalar> TrainObserver<E> for NullObserver {}

/// The agent: online and target networks plus replay and optimizer state.
///
/// Randomness is split into independent streams of one seed: stream 0
/// initializes the online network, stream 1 drives exploration, stream 2
/// drives replay sampling. Environments hold their own seeds.
pub struct Agent<E: Scalar> {
    config: AgentConfig,
    pub online: QNetwork<E>,
    pub target: QNetwork<E>,
    adam: AdamState<E>,
    pub replay: PrioritizedReplay,
    rng_explore: ChaCha8Rng,
    rng_replay: ChaCha8Rng,
    env_steps: u64,
    train_steps: u64,
}

impl<E: Scalar> Agent<E> {
    pub fn new(net: NetworkConfig, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let online = QNetwork::new(net.clone(), seed)?;
        let mut target = QNetwork::new(net, seed)?;
        target.params.copy_values_from(&online.params)?;
        let adam = AdamState::new(&online.params);
        let replay = PrioritizedReplay::new(config.replay.clone())?;
        let mut rng_explore = ChaCha8Rng::seed_from_u64(seed);
        rng_explore.set_stream(1);
        let mut rng_replay = ChaCha8Rng::seed_from_u64(seed);
        rng_replay.set_stream(2);
        Ok(Agent {
            config,
            online,
            target,
            adam,
            replay,
            rng_explore,
            rng_replay,
            env_steps: 0,
            train_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.env_steps)
    }

    fn batched(&self, window: &Tensor<f32>) -> Result<Tensor<E>> {
        let mut shape = vec![1];
        shape.extend_from_slice(window.shape());
        window.cast::<E>().into_shape(&shape)
    }

    /// Greedy action for one frame-history window (T,H,W); ties go to the
    /// lowest action index.
    pub fn greedy_action(&self, window: &Tensor<f32>) -> Result<usize> {
        let q = self.online.forward(&self.batched(window)?)?;
        Ok(argmax(q.data()))
    }

    /// Epsilon-greedy action at the current exploration rate.
    pub fn select_action(&mut self, window: &Tensor<f32>) -> Result<usize> {
        let eps = self.epsilon();
        if self.rng_explore.gen_range(0.0..1.0) < eps {
            Ok(self.rng_explore.gen_range(0..self.online.config().actions))
        } else {
            self.greedy_action(window)
        }
    }

    /// Store a transition; `state` and `next_state` are (T,H,W) windows.
    pub fn push_transition(
        &mut self,
        state: &Tensor<f32>,
        action: usize,
        reward: f32,
        next_state: &Tensor<f32>,
        done: bool,
    ) -> Result<()> {
        self.replay.push(state, action, reward, next_state, done)
    }

    /// Double-Q targets for a batch of next states, using this agent's
    /// online and target networks.
    pub fn double_targets(
        &self,
        next_states: &Tensor<E>,
        rewards: &[f32],
        dones: &[bool],
    ) -> Result<Tensor<E>> {
        let q_online = self.online.forward(next_states)?;
        let q_target = self.target.forward(next_states)?;
        double_q_targets(&q_online, &q_target, rewards, dones, self.config.gamma)
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.params.copy_values_from(&self.online.params)
    }

    /// One prioritized double-DQN gradient step; returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let beta = self.config.replay.beta_at(self.env_steps);
        let batch = self.replay.sample(self.config.batch_size, beta, &mut self.rng_replay)?;
        let b = batch.indices.len();

        let window = self.replay.state_shape().to_vec();
        let mut shape = vec![b];
        shape.extend_from_slice(&window);
        let len: usize = window.iter().product();
        let mut states = Tensor::<E>::zeros(&shape);
        let mut next_states = Tensor::<E>::zeros(&shape);
        let mut rewards = Vec::with_capacity(b);
        let mut actions = Vec::with_capacity(b);
        let mut dones = Vec::with_capacity(b);
        for (row, &idx) in batch.indices.iter().enumerate() {
            let item = self.replay.get(idx);
            item.write_state(&mut states.data_mut()[row * len..(row + 1) * len]);
            item.write_next_state(&mut next_states.data_mut()[row * len..(row + 1) * len]);
            rewards.push(item.reward);
            actions.push(item.action);
            dones.push(item.done);
        }

        let targets = self.double_targets(&next_states, &rewards, &dones)?;
        let (q, cache) = self.online.forward_cached(&states)?;
        let a_count = self.online.config().actions;
        let mut pred = Tensor::zeros(&[b]);
        for i in 0..b {
            if actions[i] >= a_count {
                return config_err(format!(
                    "stored action {} is outside the network's {} actions",
                    actions[i], a_count
                ));
            }
            pred.data_mut()[i] = q.data()[i * a_count + actions[i]];
        }

        let weights = Tensor::from_vec(
            &[b],
            batch.weights.iter().map(|&w| E::from_f64_lossy(w)).collect(),
        )?;
        let delta = E::from_f64_lossy(self.config.huber_delta);
        let (loss, grad_pred) = huber_loss(&pred, &targets, &weights, delta)?;

        // The loss only touches each row's taken action.
        let mut grad_q = Tensor::zeros(q.shape());
        for i in 0..b {
            grad_q.data_mut()[i * a_count + actions[i]] = grad_pred.data()[i];
        }

        let abs_tds: Vec<f64> = pred
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &y)| (p - y).to_f64().unwrap_or(f64::NAN).abs())
            .collect();

        self.online.params.zero_grads();
        self.online.backward(cache, &grad_q)?;
        self.adam.step(&mut self.online.params, &self.config.adam)?;
        self.replay.update_priorities(&batch.indices, &abs_tds)?;
        self.train_steps += 1;
        Ok(loss.to_f64().unwrap_or(f64::NAN))
    }

    /// Run the standard training loop for `total_steps` environment steps.
    ///
    /// Per step: act epsilon-greedily, store the transition, train every
    /// `train_every` steps once `train_start` transitions are buffered, and
    /// sync the target every `target_sync_every` steps. A metrics row is
    /// recorded per finished episode; `snapshot_every > 0` additionally calls
    /// `observer.on_snapshot` at that step cadence.
    pub fn train_loop(
        &mut self,
        env: &mut dyn Environment,
        total_steps: u64,
        snapshot_every: u64,
        observer: &mut dyn TrainObserver<E>,
    ) -> Result<Vec<MetricsRow>> {
        let start = Instant::now();
        let frames = self.online.config().frames;
        let mut history = FrameHistory::new(frames)?;
        let mut rows = Vec::new();
        let mut episode = 0u64;
        let mut episode_return = 0.0f64;
        let mut losses: Vec<f64> = Vec::new();

        history.push(env.reset(None));
        while self.env_steps < total_steps {
            let state = history.window()?;
            let action = self.select_action(&state)?;
            let step = env.step(action)?;
            episode_return += step.reward as f64;
            history.push(step.frame);
            let next_state = history.window()?;
            self.replay.push(&state, action, step.reward, &next_state, step.done)?;
            self.env_steps += 1;

            if self.replay.len() >= self.config.train_start && self.env_steps % self.config.train_every == 0 {
                losses.push(self.train_step()?);
            }
            if self.config.target_sync_every > 0 && self.env_steps % self.config.target_sync_every == 0 {
                self.sync_target()?;
            }

            if step.done {
                episode += 1;
                let loss_mean = if losses.is_empty() {
                    f64::NAN
                } else {
                    losses.iter().sum::<f64>() / losses.len() as f64
                };
                let row = MetricsRow {
                    step: self.env_steps,
                    episode,
                    episode_return,
                    loss_mean,
                    epsilon: self.epsilon(),
                    wall_seconds: start.elapsed().as_secs_f64(),
                };
                observer.on_episode(&row)?;
                rows.push(row);
                episode_return = 0.0;
                losses.clear();
                history.reset();
                history.push(env.reset(None));
            }

            if snapshot_every > 0 && self.env_steps % snapshot_every == 0 {
                observer.on_snapshot(self.env_steps, self)?;
            }
        }
        Ok(rows)
    }

    /// Mean greedy-policy return over `episodes` episodes, seeding the
    /// environment with `base_seed`, `base_seed + 1`, ...
    pub fn evaluate(&self, env: &mut dyn Environment, episodes: u64, base_seed: u64) -> Result<f64> {
        let returns = greedy_returns(&self.online, env, episodes, base_seed)?;
        Ok(returns.iter().sum::<f64>() / returns.len() as f64)
    }

    /// Positions of the exploration and replay streams, for checkpointing.
    pub fn rng_snapshots(&self) -> (RngSnapshot, RngSnapshot) {
        (RngSnapshot::of(&self.rng_explore), RngSnapshot::of(&self.rng_replay))
    }

    pub fn restore_rng(&mut self, explore: &RngSnapshot, replay: &RngSnapshot) {
        self.rng_explore = explore.restore();
        self.rng_replay = replay.restore();
    }
}
