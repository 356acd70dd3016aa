//! Double-DQN agent: twin Q-networks, a softmax-greedy policy driven by a
//! scheduled greed parameter, uniform experience replay and the decoupled
//! update rule (primary picks the follow-up action, target evaluates it).

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, Activation, Layer, Loss, Network};
use crate::tensor::Tensor;

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// FIFO ring of transitions sampled uniformly for minibatch updates.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buffer: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { buffer: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.buffer[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buffer.iter()
    }
}

/// Greed parameter progression: held at `tau_start` during exploration,
/// lowered linearly to `tau_end` across the conversion period, constant after.
#[derive(Debug, Clone, Copy)]
pub struct GreedSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub exploration_steps: usize,
    pub conversion_steps: usize,
}

impl GreedSchedule {
    pub fn new(exploration_steps: usize, conversion_steps: usize) -> Self {
        Self { tau_start: 1.0, tau_end: 0.2, exploration_steps, conversion_steps }
    }

    pub fn tau(&self, step: usize) -> f64 {
        if step < self.exploration_steps {
            self.tau_start
        } else if step < self.exploration_steps + self.conversion_steps {
            let progress = (step - self.exploration_steps) as f64 / self.conversion_steps as f64;
            self.tau_start + (self.tau_end - self.tau_start) * progress
        } else {
            self.tau_end
        }
    }
}

/// Linear learning-rate decay over the whole training run.
#[derive(Debug, Clone, Copy)]
pub struct LearningRateSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: usize,
}

impl LearningRateSchedule {
    pub fn new(lr_start: f64, lr_end: f64, total_steps: usize) -> Self {
        Self { lr_start, lr_end, total_steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return self.lr_end;
        }
        let progress = step as f64 / self.total_steps as f64;
        self.lr_start + (self.lr_end - self.lr_start) * progress
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub action_space: usize,
    pub hidden: (usize, usize),
    pub l2: f64,
    pub leaky_slope: f64,
    pub batchnorm: bool,
    pub gamma: f64,
    pub target_sync: usize,
    pub batch_size: usize,
    pub memory_capacity: usize,
}

impl AgentConfig {
    /// Single-image mode: hidden (24, 12).
    pub fn exp1() -> Self {
        Self {
            state_dim: 27,
            action_space: 2,
            hidden: (24, 12),
            l2: 0.001,
            leaky_slope: 0.3,
            batchnorm: true,
            gamma: 0.9,
            target_sync: 10,
            batch_size: 64,
            memory_capacity: 1000,
        }
    }

    /// Sample/bundle modes: scaled up to hidden (48, 24).
    pub fn exp2() -> Self {
        Self { state_dim: 35, action_space: 6, hidden: (48, 24), ..Self::exp1() }
    }
}

#[derive(Clone)]
pub struct Agent {
    pub primary: Network,
    pub target: Network,
    config: AgentConfig,
    update_counter: usize,
}

impl Agent {
    /// Dense h1 LeakyReLU -> BatchNorm -> Dense h2 LeakyReLU -> BatchNorm ->
    /// Dense action_space (linear Q head), He-uniform init, MSE loss.
    pub fn new<R: Rng>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        if config.gamma < 0.0 || config.gamma >= 1.0 {
            return Err(Error::Config(format!("gamma must lie in [0,1), got {}", config.gamma)));
        }
        let act = Activation::LeakyRelu(config.leaky_slope);
        let mut layers = Vec::new();
        layers.push(Layer::dense(config.state_dim, config.hidden.0, act, config.l2, rng)?);
        if config.batchnorm {
            layers.push(Layer::batchnorm(config.hidden.0));
        }
        layers.push(Layer::dense(config.hidden.0, config.hidden.1, act, config.l2, rng)?);
        if config.batchnorm {
            layers.push(Layer::batchnorm(config.hidden.1));
        }
        layers.push(Layer::dense(config.hidden.1, config.action_space, Activation::None, config.l2, rng)?);
        let primary = Network::new(layers, Loss::Mse);
        let target = primary.clone();
        Ok(Self { primary, target, config, update_counter: 0 })
    }

    /// Reassemble an agent from checkpointed networks.
    pub fn from_parts(config: AgentConfig, primary: Network, target: Network) -> Result<Self> {
        for net in [&primary, &target] {
            if net.output_dim() != Some(config.action_space) {
                return Err(Error::Config(format!(
                    "checkpointed network outputs {:?} Q-values, config says {}",
                    net.output_dim(),
                    config.action_space
                )));
            }
        }
        Ok(Self { primary, target, config, update_counter: 0 })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn update_counter(&self) -> usize {
        self.update_counter
    }

    pub fn set_update_counter(&mut self, value: usize) {
        self.update_counter = value;
    }

    /// Q-values of the primary network for one state (eval mode).
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.config.state_dim {
            return Err(Error::Config(format!(
                "state has {} dims, agent expects {}",
                state.len(),
                self.config.state_dim
            )));
        }
        let input = Tensor::new(vec![1, state.len()], state.to_vec())?;
        Ok(self.primary.forward_eval(&input)?.into_data())
    }

    /// Pick an action: greedy takes the argmax (lowest index on ties),
    /// otherwise sample from Cat(softmax(Q / tau)).
    pub fn act<R: Rng>(&self, state: &[f64], tau: f64, rng: &mut R, greedy: bool) -> Result<usize> {
        let q = self.q_values(state)?;
        if greedy {
            return Ok(argmax_first(&q));
        }
        if tau <= 0.0 {
            return Err(Error::Config(format!("greed parameter must be positive, got {tau}")));
        }
        let mut probs = q;
        softmax_in_place(&mut probs, tau);
        let draw: f64 = rng.gen();
        let mut cumulative = 0.0;
        for (action, p) in probs.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                return Ok(action);
            }
        }
        Ok(probs.len() - 1)
    }

    /// Double-DQN regression target: r for terminal transitions, otherwise
    /// r + gamma * Q_target(s', argmax_a Q_primary(s', a)).
    pub fn ddqn_target(&self, transition: &Transition) -> Result<f64> {
        if transition.done {
            return Ok(transition.reward);
        }
        let next = Tensor::new(vec![1, transition.next_state.len()], transition.next_state.clone())?;
        let primary_q = self.primary.forward_eval(&next)?;
        let best = argmax_first(primary_q.data());
        let target_q = self.target.forward_eval(&next)?;
        Ok(transition.reward + self.config.gamma * target_q.data()[best])
    }

    /// One uniform-minibatch update. Returns the batch loss; a no-op (loss 0)
    /// while the buffer is still below one batch. Every `target_sync` updates
    /// the target network becomes a byte-identical copy of the primary.
    pub fn train_step<R: Rng>(
        &mut self,
        buffer: &ReplayBuffer,
        lr: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let batch = self.config.batch_size;
        if buffer.len() < batch {
            return Ok(0.0);
        }
        let dim = self.config.state_dim;
        let mut states = Vec::with_capacity(batch * dim);
        let mut actions = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        for _ in 0..batch {
            let t = buffer.get(rng.gen_range(0..buffer.len()));
            states.extend_from_slice(&t.state);
            actions.push(t.action);
            targets.push(self.ddqn_target(t)?);
        }
        let states = Tensor::new(vec![batch, dim], states)?;
        // Regression only through the taken actions: every other entry of the
        // target equals the prediction and contributes zero gradient.
        let (loss, grads) = self.primary.backward_from(&states, |pred| {
            let mut masked = pred.clone();
            for (row, (action, y)) in actions.iter().zip(&targets).enumerate() {
                masked.row_mut(row)[*action] = *y;
            }
            masked
        })?;
        self.primary.sgd_step(&grads, lr).map_err(|e| {
            Error::Numeric(format!("diverged at update {} (loss {loss}, lr {lr}): {e}", self.update_counter))
        })?;
        self.update_counter += 1;
        if self.update_counter % self.config.target_sync == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.primary.clone();
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Store a transition, evicting the oldest once capacity is reached.
pub fn remember(buffer: &mut ReplayBuffer, transition: Transition) {
    buffer.push(transition);
}
