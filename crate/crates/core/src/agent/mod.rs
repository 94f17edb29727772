//! The action-head DQN agent: a Q network scoring one (state, action) pair
//! per forward pass so the candidate pool can change freely, plus replay,
//! a lagged target network, and the training loop.

pub mod policies;

pub use policies::{policy_cosine, policy_gmpc, policy_random, Policy};

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{seeded_rng, RewardHead, SimRng};
use crate::env::{Env, EnvState};
use crate::error::{Result, SimError};
use crate::neural::checkpoint::{read_checkpoint, write_checkpoint};
use crate::neural::loss::mse_loss;
use crate::neural::{copy_params, Activation, Adam, DenseNet, Parameterized};

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}

/// DQN hyperparameters. The target network syncs every
/// `target_sync_period` updates; epsilon decays linearly from
/// `epsilon_start` to `epsilon_end` over the first `epsilon_fraction` of
/// training steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_fraction: f64,
    pub target_sync_period: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub lr: f64,
    pub clip: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.5,
            target_sync_period: 50,
            batch_size: 64,
            buffer_capacity: 50_000,
            warmup: 1000,
            lr: 1e-3,
            clip: 5.0,
            hidden: default_hidden(),
            episodes: 300,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SimError::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.target_sync_period == 0 {
            return Err(SimError::Config("target sync period must be at least 1".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(SimError::Config("batch size and buffer capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed-length state encoding: context mean, mean features of the tracks
/// already selected (zeros if none), episode progress, and mean reward so
/// far (zero if none).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFeaturizer {
    pub feature_dim: usize,
    pub horizon: usize,
    pub reward_head: RewardHead,
}

impl StateFeaturizer {
    pub fn new(feature_dim: usize, horizon: usize, reward_head: RewardHead) -> Self {
        Self { feature_dim, horizon, reward_head }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.feature_dim + 2
    }

    pub fn featurize(&self, state: &EnvState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        out.extend_from_slice(&state.context.values);
        if state.selected.is_empty() {
            out.extend(std::iter::repeat(0.0).take(self.feature_dim));
            out.push(0.0);
            out.push(0.0);
        } else {
            let n = state.selected.len() as f64;
            let mut mean = vec![0.0; self.feature_dim];
            let mut reward_sum = 0.0;
            for (track, probs) in &state.selected {
                for (m, v) in mean.iter_mut().zip(&track.features) {
                    *m += v;
                }
                reward_sum += probs.head(self.reward_head);
            }
            out.extend(mean.into_iter().map(|m| m / n));
            out.push(state.step as f64 / self.horizon.max(1) as f64);
            out.push(reward_sum / n);
        }
        out
    }
}

/// The action-head Q network: one scalar Q per (state features, action
/// features) input.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub net: DenseNet,
    pub featurizer: StateFeaturizer,
}

#[derive(Serialize, Deserialize)]
struct QNetMeta {
    dims: Vec<usize>,
    acts: Vec<Activation>,
    featurizer: StateFeaturizer,
}

impl QNetwork {
    pub fn new(featurizer: StateFeaturizer, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![featurizer.output_dim() + featurizer.feature_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        let mut rng = seeded_rng(seed);
        Ok(Self { net: DenseNet::new(&dims, &acts, &mut rng)?, featurizer })
    }

    pub fn state_dim(&self) -> usize {
        self.featurizer.output_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.featurizer.feature_dim
    }

    /// Q value of one raw (state features, action features) pair.
    pub fn q_value(&self, state_f: &[f64], action_f: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(state_f.len() + action_f.len());
        x.extend_from_slice(state_f);
        x.extend_from_slice(action_f);
        Ok(self.net.forward(&x)?[0])
    }

    /// One independent forward pass per pool item.
    pub fn q_values(&self, state: &EnvState) -> Result<Vec<f64>> {
        if state.pool.is_empty() {
            return Err(SimError::EmptyInput("candidate pool"));
        }
        let state_f = self.featurizer.featurize(state);
        state.pool.iter().map(|track| self.q_value(&state_f, &track.features)).collect()
    }

    /// Greedy action over the pool; ties break to the lowest index.
    pub fn act_greedy(&self, state: &EnvState) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = QNetMeta {
            dims: self.net.dims(),
            acts: self.net.activations(),
            featurizer: self.featurizer.clone(),
        };
        write_checkpoint(path, "qnet", &meta, &self.net.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (QNetMeta, _) = read_checkpoint(path, "qnet")?;
        let mut net = DenseNet::zeros(&meta.dims, &meta.acts)?;
        net.set_params(&params)?;
        Ok(Self { net, featurizer: meta.featurizer })
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (idx, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = idx;
        }
    }
    best
}

/// One stored transition. The next state's remaining pool rides along so
/// Bellman targets honor the dynamic action set.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_actions: Vec<Vec<f64>>,
    pub done: bool,
}

/// Uniform-sampling ring buffer.
pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { buf: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn sample(&self, rng: &mut SimRng, n: usize) -> Vec<Transition> {
        (0..n).map(|_| self.buf[rng.gen_range(0..self.buf.len())].clone()).collect()
    }
}

/// Online network, lagged target, optimizer, and sync bookkeeping.
pub struct AgentTrainer {
    pub online: QNetwork,
    pub target: QNetwork,
    opt: Adam,
    pub updates: u64,
    pub syncs: u64,
    gamma: f64,
    sync_period: u64,
}

impl AgentTrainer {
    pub fn new(online: QNetwork, cfg: &AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let target = online.clone();
        Ok(Self {
            online,
            target,
            opt: Adam::new(cfg.lr, Some(cfg.clip)),
            updates: 0,
            syncs: 0,
            gamma: cfg.gamma,
            sync_period: cfg.target_sync_period,
        })
    }

    /// Bellman target for one transition: `r` when terminal, else
    /// `r + gamma * max_a target_Q(s', a)` over the stored next pool.
    fn bellman_target(&self, t: &Transition) -> Result<f64> {
        if t.done || t.next_actions.is_empty() {
            return Ok(t.reward);
        }
        let mut best = f64::NEG_INFINITY;
        for action in &t.next_actions {
            let q = self.target.q_value(&t.next_state, action)?;
            if q > best {
                best = q;
            }
        }
        Ok(t.reward + self.gamma * best)
    }

    /// One optimizer step on the element-wise squared TD error of a batch.
    /// Returns the batch loss. Counts the update and syncs the target
    /// network whenever the period divides the update count.
    pub fn td_update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(SimError::EmptyInput("td batch"));
        }
        let n = batch.len() as f64;
        let mut preds = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        let mut grads = vec![0.0; self.online.net.param_count()];
        for t in batch {
            let target = self.bellman_target(t)?;
            let mut x = Vec::with_capacity(t.state.len() + t.action.len());
            x.extend_from_slice(&t.state);
            x.extend_from_slice(&t.action);
            let (out, cache) = self.online.net.forward_cached(&x)?;
            let pred = out[0];
            let upstream = vec![2.0 * (pred - target) / n];
            let (flat, _) = self.online.net.backward(&cache, &upstream);
            for (acc, g) in grads.iter_mut().zip(&flat) {
                *acc += g;
            }
            preds.push(pred);
            targets.push(target);
        }
        let loss = mse_loss(&preds, &targets);
        if !loss.is_finite() {
            return Err(SimError::NonFinite("td loss".into()));
        }
        self.opt.step(&mut self.online.net, &grads)?;
        self.updates += 1;
        if self.updates % self.sync_period == 0 {
            copy_params(&self.online.net, &mut self.target.net)?;
            self.syncs += 1;
        }
        Ok(loss)
    }
}

/// One row of the per-episode training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeLogRow {
    pub episode: usize,
    pub ret: f64,
    pub epsilon: f64,
    pub mean_loss: f64,
    pub syncs: u64,
}

pub fn write_agent_log(path: &Path, log: &[EpisodeLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    w.write_record(["episode", "return", "epsilon", "mean_loss", "target_syncs"])?;
    for row in log {
        w.write_record([
            row.episode.to_string(),
            format!("{}", row.ret),
            format!("{}", row.epsilon),
            format!("{}", row.mean_loss),
            row.syncs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn epsilon_at(cfg: &AgentConfig, step: usize, total_steps: usize) -> f64 {
    let decay_steps = (total_steps as f64 * cfg.epsilon_fraction).max(1.0);
    if (step as f64) >= decay_steps {
        cfg.epsilon_end
    } else {
        cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * step as f64 / decay_steps
    }
}

/// Trains an agent with epsilon-greedy rollouts against the environment.
/// Episodes start from initial states sampled uniformly out of `inits`.
pub fn train_agent(
    env: &Env,
    inits: &[EnvState],
    cfg: &AgentConfig,
) -> Result<(QNetwork, Vec<EpisodeLogRow>)> {
    cfg.validate()?;
    let first = inits.first().ok_or(SimError::EmptyInput("episode initializations"))?;
    let feature_dim = first.pool.first().map(|t| t.dim()).unwrap_or(0);
    let featurizer =
        StateFeaturizer::new(feature_dim, env.config.horizon, env.config.reward_head);
    let qnet = QNetwork::new(featurizer, &cfg.hidden, cfg.seed)?;
    let mut trainer = AgentTrainer::new(qnet, cfg)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut rng = seeded_rng(cfg.seed ^ 0x6167_656e);
    let mut log = Vec::with_capacity(cfg.episodes);

    let total_steps = cfg.episodes * env.config.horizon;
    let mut env_step = 0usize;

    for episode in 0..cfg.episodes {
        let mut state = inits[rng.gen_range(0..inits.len())].clone();
        let mut ret = 0.0;
        let mut losses = Vec::new();
        let mut epsilon = epsilon_at(cfg, env_step, total_steps);
        while !env.is_done(&state) {
            epsilon = epsilon_at(cfg, env_step, total_steps);
            let action = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..state.pool.len())
            } else {
                trainer.online.act_greedy(&state)?
            };
            let state_f = trainer.online.featurizer.featurize(&state);
            let action_f = state.pool[action].features.clone();
            let result = env.step(&state, action)?;
            let next_state_f = trainer.online.featurizer.featurize(&result.next_state);
            let next_actions: Vec<Vec<f64>> = if result.done {
                Vec::new()
            } else {
                result.next_state.pool.iter().map(|t| t.features.clone()).collect()
            };
            buffer.push(Transition {
                state: state_f,
                action: action_f,
                reward: result.reward,
                next_state: next_state_f,
                next_actions,
                done: result.done,
            });
            ret += result.reward;
            state = result.next_state;
            env_step += 1;

            if buffer.len() >= cfg.warmup.max(cfg.batch_size) {
                let batch = buffer.sample(&mut rng, cfg.batch_size);
                losses.push(trainer.td_update(&batch)?);
            }
        }
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        log.push(EpisodeLogRow { episode, ret, epsilon, mean_loss, syncs: trainer.syncs });
    }

    Ok((trainer.online, log))
}
