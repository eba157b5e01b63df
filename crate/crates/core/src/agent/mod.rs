//! The localization policy: Q-function approximators, ε-greedy selection,
//! replay memory and the DQN learner that ties them together.

mod network;
mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use network::{
    dynamic_filter, frames_to_tensor, packed_to_tensor, q_network, Activation, AgentNetwork, Layer,
    NetworkSpec, QVariant, Sequential, STATE_CHANNELS, STATE_SIZE,
};
pub use replay::{Experience, ReplayBuffer};

use crate::autodiff::{RmsProp, RmsPropConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{Action, N_ACTIONS};
use crate::imaging::PackedFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Huber,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Per environment step.
    pub epsilon_decay_rate: f64,
    pub network: NetworkSpec,
    pub use_target_network: bool,
    /// In environment steps.
    pub target_sync_interval: u64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub train_every: u64,
    pub warmup_steps: u64,
    pub loss: LossKind,
    pub huber_delta: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.85,
            epsilon_start: 0.95,
            epsilon_end: 0.05,
            epsilon_decay_rate: 0.9999,
            network: NetworkSpec::default(),
            use_target_network: true,
            target_sync_interval: 500,
            replay_capacity: 5000,
            batch_size: 32,
            train_every: 4,
            warmup_steps: 1000,
            loss: LossKind::Huber,
            huber_delta: 1.0,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 1e-8,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("agent.{msg}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("epsilon_end/epsilon_start must satisfy 0 <= end <= start <= 1");
        }
        if !(self.epsilon_decay_rate > 0.0 && self.epsilon_decay_rate <= 1.0) {
            return bad("epsilon_decay_rate must lie in (0, 1]");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("need 0 < batch_size <= replay_capacity");
        }
        if self.train_every == 0 {
            return bad("train_every must be positive");
        }
        if self.use_target_network && self.target_sync_interval == 0 {
            return bad("target_sync_interval must be positive");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be positive");
        }
        RmsPropConfig {
            lr: 1.0,
            decay_rate: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
        .validate()
    }

    pub fn rmsprop(&self, lr: f64) -> RmsPropConfig {
        RmsPropConfig {
            lr,
            decay_rate: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }
}

pub fn epsilon_at(step: u64, cfg: &AgentConfig) -> f64 {
    let decayed = cfg.epsilon_start * cfg.epsilon_decay_rate.powf(step as f64);
    decayed.max(cfg.epsilon_end)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

pub fn select_action<R: Rng + ?Sized>(q: &[f64; N_ACTIONS], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Action::ALL[rng.random_range(0..N_ACTIONS)]
    } else {
        argmax(q)
    }
}

pub fn bellman_target<S>(exp: &Experience<S>, target_q_next: &[f64; N_ACTIONS], cfg: &AgentConfig) -> f64 {
    if exp.terminal {
        exp.reward
    } else {
        exp.reward + cfg.gamma * target_q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A trainable action-value function.
pub trait QFunction: Clone {
    type State: Clone;

    fn q_values_batch(&self, states: &[&Self::State]) -> Result<Vec<[f64; N_ACTIONS]>>;

    /// One optimizer step toward `targets` for the taken actions; returns
    /// the loss before the step.
    fn fit(&mut self, states: &[&Self::State], actions: &[Action], targets: &[f64], lr: f64) -> Result<f64>;

    fn q_values(&self, state: &Self::State) -> Result<[f64; N_ACTIONS]> {
        Ok(self.q_values_batch(&[state])?[0])
    }
}

/// Outcome of feeding one transition to the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserveOutcome {
    pub loss: Option<f64>,
    pub target_synced: bool,
}

/// DQN learner: online and target Q-functions plus replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent<Q: QFunction> {
    config: AgentConfig,
    online: Q,
    target: Option<Q>,
    replay: ReplayBuffer<Q::State>,
    env_steps: u64,
    updates: u64,
}

impl<Q: QFunction> DqnAgent<Q> {
    pub fn new(online: Q, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let target = config.use_target_network.then(|| online.clone());
        let replay = ReplayBuffer::new(config.replay_capacity);
        Ok(DqnAgent {
            config,
            online,
            target,
            replay,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &Q {
        &self.online
    }

    pub fn into_online(self) -> Q {
        self.online
    }

    pub fn replay(&self) -> &ReplayBuffer<Q::State> {
        &self.replay
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.env_steps, &self.config)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &Q::State, rng: &mut R) -> Result<Action> {
        let eps = self.epsilon();
        if eps >= 1.0 {
            return Ok(select_action(&[0.0; N_ACTIONS], eps, rng));
        }
        let q = self.online.q_values(state)?;
        Ok(select_action(&q, eps, rng))
    }

    pub fn greedy(&self, state: &Q::State) -> Result<Action> {
        Ok(argmax(&self.online.q_values(state)?))
    }

    /// Stores the transition, then trains and syncs on schedule.
    pub fn observe<R: Rng + ?Sized>(&mut self, exp: Experience<Q::State>, lr: f64, rng: &mut R) -> Result<ObserveOutcome> {
        self.replay.push(exp);
        self.env_steps += 1;
        let mut out = ObserveOutcome {
            loss: None,
            target_synced: false,
        };
        if self.env_steps > self.config.warmup_steps
            && self.env_steps.is_multiple_of(self.config.train_every)
            && self.replay.len() >= self.config.batch_size
        {
            out.loss = Some(self.train_step(lr, rng)?);
        }
        if let Some(target) = &mut self.target {
            if self.env_steps.is_multiple_of(self.config.target_sync_interval) {
                *target = self.online.clone();
                out.target_synced = true;
            }
        }
        Ok(out)
    }

    fn train_step<R: Rng + ?Sized>(&mut self, lr: f64, rng: &mut R) -> Result<f64> {
        let batch = self.replay.sample(self.config.batch_size, rng)?;
        let next: Vec<&Q::State> = batch.iter().map(|e| &e.next_state).collect();
        let bootstrap = self.target.as_ref().unwrap_or(&self.online).q_values_batch(&next)?;
        let targets: Vec<f64> = batch
            .iter()
            .zip(&bootstrap)
            .map(|(e, q)| bellman_target(e, q, &self.config))
            .collect();
        let states: Vec<&Q::State> = batch.iter().map(|e| &e.state).collect();
        let actions: Vec<Action> = batch.iter().map(|e| e.action).collect();
        let loss = self.online.fit(&states, &actions, &targets, lr)?;
        self.updates += 1;
        Ok(loss)
    }
}

/// Neural Q-function over 8-bit RGB states.
#[derive(Debug, Clone)]
pub struct NeuralQ {
    pub net: AgentNetwork<f32>,
    opt: RmsProp<f32>,
    loss: LossKind,
    huber_delta: f64,
}

impl NeuralQ {
    pub fn new(net: AgentNetwork<f32>, cfg: &AgentConfig, lr: f64) -> Self {
        NeuralQ {
            net,
            opt: RmsProp::new(cfg.rmsprop(lr)),
            loss: cfg.loss,
            huber_delta: cfg.huber_delta,
        }
    }

    pub fn optimizer(&self) -> &RmsProp<f32> {
        &self.opt
    }
}

impl QFunction for NeuralQ {
    type State = PackedFrame;

    fn q_values_batch(&self, states: &[&PackedFrame]) -> Result<Vec<[f64; N_ACTIONS]>> {
        self.net.q_values_tensor(packed_to_tensor(states)?)
    }

    fn fit(&mut self, states: &[&PackedFrame], actions: &[Action], targets: &[f64], lr: f64) -> Result<f64> {
        let input = packed_to_tensor::<f32>(states)?;
        let idx: Vec<usize> = actions.iter().map(|a| a.index()).collect();
        let target: Vec<f32> = targets.iter().map(|&t| t as f32).collect();
        let params = self.net.params();
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let q = self.net.forward_tape(&mut tape, x)?;
        let picked = tape.gather(q, &idx)?;
        let loss = match self.loss {
            LossKind::Huber => tape.huber(picked, &target, self.huber_delta as f32)?,
            LossKind::Mse => tape.mse(picked, &target)?,
        };
        let loss_value = f64::from(tape.value(loss).data()[0]);
        if !loss_value.is_finite() {
            return Ok(loss_value);
        }
        tape.backward(loss)?;
        let grads: Vec<Option<Vec<f32>>> = params.tensors().iter().map(|t| tape.param_grad(t)).collect();
        drop(tape);
        let grad_refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
        self.opt.set_lr(lr);
        self.opt.step(self.net.params_mut(), &grad_refs)?;
        Ok(loss_value)
    }
}

/// Lookup-table Q-function over integer states, trained with the same
/// loss and optimizer as the network.
#[derive(Debug, Clone)]
pub struct TabularQ {
    table: crate::autodiff::ParamSet<f64>,
    opt: RmsProp<f64>,
    loss: LossKind,
    huber_delta: f64,
}

impl TabularQ {
    pub fn new(n_states: usize, cfg: &AgentConfig, lr: f64) -> Self {
        let mut table = crate::autodiff::ParamSet::new();
        table.insert("q", Tensor::zeros(&[n_states, N_ACTIONS]));
        TabularQ {
            table,
            opt: RmsProp::new(cfg.rmsprop(lr)),
            loss: cfg.loss,
            huber_delta: cfg.huber_delta,
        }
    }

    pub fn n_states(&self) -> usize {
        self.table.tensors()[0].shape()[0]
    }

    fn row(&self, s: usize) -> Result<[f64; N_ACTIONS]> {
        let data = self.table.tensors()[0].data();
        let row = data
            .get(s * N_ACTIONS..(s + 1) * N_ACTIONS)
            .ok_or_else(|| Error::InvalidArgument(format!("state {s} out of range")))?;
        Ok(std::array::from_fn(|a| row[a]))
    }
}

impl QFunction for TabularQ {
    type State = usize;

    fn q_values_batch(&self, states: &[&usize]) -> Result<Vec<[f64; N_ACTIONS]>> {
        states.iter().map(|&&s| self.row(s)).collect()
    }

    fn fit(&mut self, states: &[&usize], actions: &[Action], targets: &[f64], lr: f64) -> Result<f64> {
        let n = states.len() as f64;
        let mut grad = vec![0.0; self.table.count()];
        let mut loss = 0.0;
        for ((&&s, a), &y) in states.iter().zip(actions).zip(targets) {
            let i = s * N_ACTIONS + a.index();
            let d = self.table.tensors()[0].data()[i] - y;
            let (l, g) = match self.loss {
                LossKind::Mse => (d * d, 2.0 * d),
                LossKind::Huber => {
                    let delta = self.huber_delta;
                    if d.abs() <= delta {
                        (0.5 * d * d, d)
                    } else {
                        (delta * (d.abs() - 0.5 * delta), delta * d.signum())
                    }
                }
            };
            loss += l / n;
            grad[i] += g / n;
        }
        self.opt.set_lr(lr);
        self.opt.step(&mut self.table, &[Some(&grad)])?;
        Ok(loss)
    }
}
