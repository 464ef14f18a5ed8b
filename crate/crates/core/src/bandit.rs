//! Neural epsilon-greedy contextual bandit.
//!
//! A small MLP maps the normalized task context to one predicted target per
//! action (sigmoid outputs in (0, 1)). Only the chosen action's output is
//! regressed towards the observed, affinely normalized reward.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netsim::{Action, TaskOutcome};
use crate::rng::{substream, RngState, SimRng, Stream};
use crate::workload::Context;

pub const CONTEXT_DIM: usize = 3;

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    /// Penalty for a missed deadline.
    pub penalty: f64,
    /// Efficiency, in (bits/s)/J, that maps to a reward of 1.
    pub efficiency_scale: f64,
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(Error::config("agent.reward.penalty", "must be >= 0"));
        }
        if !(self.efficiency_scale.is_finite() && self.efficiency_scale > 0.0) {
            return Err(Error::config("agent.reward.efficiency_scale", "must be > 0"));
        }
        Ok(())
    }
}

/// `r = 1{T <= D} (eta + penalty) - penalty` with `eta = min(S / (T E scale), 1)`.
pub fn compute_reward(outcome: &TaskOutcome, params: &RewardParams) -> Result<f64> {
    if !(outcome.response > 0.0 && outcome.e_total > 0.0) {
        return Err(Error::domain(format!(
            "reward needs positive response time and energy (T = {}, E = {})",
            outcome.response, outcome.e_total
        )));
    }
    if !outcome.met_deadline {
        return Ok(-params.penalty);
    }
    let eta = (outcome.efficiency() / params.efficiency_scale).min(1.0);
    Ok(eta)
}

/// Maps `r ∈ [-penalty, 1]` onto the sigmoid target range [0, 1].
pub fn reward_to_target(r: f64, penalty: f64) -> f64 {
    (r + penalty) / (1.0 + penalty)
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fully connected network: rectifier hidden layers, logistic outputs.
///
/// Parameters live in one flat vector; layer `l` stores its row-major
/// `out x in` weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// All weights and biases zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain(format!("invalid layer sizes {sizes:?}")));
        }
        let n: usize = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`, optionally
    /// multiplied by `scale`), zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], scale: f64, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut m.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(m)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let m = Self::zeros(sizes)?;
        if params.len() != m.params.len() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    /// (weights, biases) of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (
            &self.params[off..off + i * o],
            &self.params[off + i * o..off + i * o + o],
        )
    }

    fn offset(&self, l: usize) -> usize {
        self.sizes[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let out: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let z = b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if l + 1 == n_layers {
                        sigmoid(z)
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("at least one layer")
    }

    /// Mean squared error of the chosen outputs over `batch`, and its gradient
    /// with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[Experience]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n_layers = self.sizes.len() - 1;
        let inv_n = 1.0 / batch.len() as f64;
        let offsets: Vec<usize> = (0..n_layers).map(|l| self.offset(l)).collect();
        for ex in batch {
            let acts = self.activations(&ex.context.0);
            let y = acts[n_layers][ex.action];
            let err = y - ex.target;
            loss += err * err * inv_n;
            // dL/dz at the output: only the chosen unit carries signal.
            let mut delta = vec![0.0; self.sizes[n_layers]];
            delta[ex.action] = 2.0 * err * inv_n * y * (1.0 - y);
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let input = &acts[l];
                for j in 0..n_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[off + j * n_in..off + (j + 1) * n_in];
                    for (g, a) in gw.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad[off + n_in * n_out + j] += d;
                }
                if l > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    let mut prev = vec![0.0; n_in];
                    for j in 0..n_out {
                        let d = delta[j];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, wv) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                            *p += d * wv;
                        }
                    }
                    // Rectifier derivative from the post-activation value.
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        (loss, grad)
    }

    pub fn loss(&self, batch: &[Experience]) -> f64 {
        let inv_n = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|ex| {
                let e = self.forward(&ex.context.0)[ex.action] - ex.target;
                e * e * inv_n
            })
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    /// Running mean of squared gradients, one per parameter.
    pub accumulator: Vec<f64>,
}

impl RmsProp {
    pub fn new(n_params: usize, learning_rate: f64, decay: f64, eps: f64) -> Self {
        RmsProp {
            learning_rate,
            decay,
            eps,
            accumulator: vec![0.0; n_params],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), acc) in params.iter_mut().zip(grad).zip(&mut self.accumulator) {
            *acc = self.decay * *acc + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (*acc + self.eps).sqrt();
        }
    }

    pub fn reset(&mut self) {
        self.accumulator.iter_mut().for_each(|a| *a = 0.0);
    }
}

/// One RMSProp step on `batch`; returns the pre-update loss.
pub fn train_step(model: &mut Mlp, opt: &mut RmsProp, batch: &[Experience]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let (loss, grad) = model.loss_and_gradient(batch);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingFault(format!(
            "non-finite loss or gradient (loss = {loss})"
        )));
    }
    opt.apply(model.params_mut(), &grad);
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

/// One (context, action, target) training tuple. `target` is already in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub context: Context,
    pub action: Action,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, overwriting the oldest tuple once full.
    pub fn push(&mut self, ex: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(ex);
        } else {
            self.items[self.cursor] = ex;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Uniform minibatch; without replacement unless the buffer is smaller than `size`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Vec<Experience> {
        let n = self.items.len();
        if n == 0 {
            return Vec::new();
        }
        if n >= size {
            index::sample(rng, n, size).into_iter().map(|i| self.items[i]).collect()
        } else {
            (0..size).map(|_| self.items[rng.gen_range(0..n)]).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy with probability `1 - epsilon`, uniform otherwise. Draws nothing when `epsilon == 0`.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Warm-started steps from the current parameters after each observation.
    Incremental,
    /// Reset to the initial parameters and retrain after each observation.
    FromScratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub batch_size: usize,
    pub steps_per_observation: usize,
    pub buffer_capacity: usize,
    pub hidden_layers: Vec<usize>,
    /// Multiplier on the Glorot-uniform limit.
    pub init_scale: f64,
    pub train_mode: TrainMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            learning_rate: 1e-3,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            batch_size: 64,
            steps_per_observation: 1,
            buffer_capacity: 50_000,
            hidden_layers: vec![50, 50],
            init_scale: 1.0,
            train_mode: TrainMode::Incremental,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("agent.{name}"), "must lie in [0, 1]"))
            }
        };
        unit("epsilon_start", self.epsilon_start)?;
        unit("epsilon_decay", self.epsilon_decay)?;
        unit("epsilon_min", self.epsilon_min)?;
        unit("rmsprop_decay", self.rmsprop_decay)?;
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("agent.{name}"), "must be > 0"))
            }
        };
        pos("learning_rate", self.learning_rate)?;
        pos("rmsprop_eps", self.rmsprop_eps)?;
        pos("init_scale", self.init_scale)?;
        if self.batch_size == 0 {
            return Err(Error::config("agent.batch_size", "must be >= 1"));
        }
        if self.steps_per_observation == 0 {
            return Err(Error::config("agent.steps_per_observation", "must be >= 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("agent.buffer_capacity", "must be >= 1"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("agent.hidden_layers", "layer widths must be >= 1"));
        }
        Ok(())
    }

    /// `max(epsilon_min, epsilon_start * decay^episode)`.
    pub fn epsilon_at(&self, episode: u64) -> f64 {
        let e = self.epsilon_start * self.epsilon_decay.powf(episode as f64);
        e.max(self.epsilon_min)
    }

    pub fn layer_sizes(&self, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![CONTEXT_DIM];
        sizes.extend(&self.hidden_layers);
        sizes.push(n_actions);
        sizes
    }
}

/// E2DA learner: reward model, optimizer, replay buffer and its RNG streams.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    reward: RewardParams,
    model: Mlp,
    initial: Vec<f64>,
    optimizer: RmsProp,
    buffer: ReplayBuffer,
    explore_rng: SimRng,
    batch_rng: SimRng,
    /// Training episodes completed so far.
    pub episodes_completed: u64,
}

impl Agent {
    /// Fresh agent `index` seeded from the top-level `seed`.
    pub fn new(config: AgentConfig, reward: RewardParams, n_actions: usize, seed: u64, index: u32) -> Result<Self> {
        config.validate()?;
        reward.validate()?;
        let mut init_rng = substream(seed, Stream::AgentInit(index));
        let model = Mlp::glorot(&config.layer_sizes(n_actions), config.init_scale, &mut init_rng)?;
        let optimizer = RmsProp::new(
            model.params().len(),
            config.learning_rate,
            config.rmsprop_decay,
            config.rmsprop_eps,
        );
        Ok(Agent {
            initial: model.params().to_vec(),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            explore_rng: substream(seed, Stream::Exploration(index)),
            batch_rng: substream(seed, Stream::Minibatch(index)),
            config,
            reward,
            model,
            optimizer,
            episodes_completed: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn predict(&self, x: &Context) -> Vec<f64> {
        self.model.forward(&x.0)
    }

    /// Epsilon-greedy choice for context `x`.
    pub fn act(&mut self, x: &Context, epsilon: f64) -> Action {
        let q = self.predict(x);
        select_action(&q, epsilon, &mut self.explore_rng)
    }

    /// Stores `(x, a, r)` and trains. Returns the mean loss of the steps taken.
    pub fn observe(&mut self, x: Context, action: Action, reward: f64) -> Result<f64> {
        let target = reward_to_target(reward, self.reward.penalty).clamp(0.0, 1.0);
        self.buffer.push(Experience {
            context: x,
            action,
            target,
        });
        if self.config.train_mode == TrainMode::FromScratch {
            self.model.params_mut().copy_from_slice(&self.initial);
            self.optimizer.reset();
        }
        let steps = self.config.steps_per_observation;
        let mut total = 0.0;
        for _ in 0..steps {
            let batch = self.buffer.sample(&mut self.batch_rng, self.config.batch_size);
            total += train_step(&mut self.model, &mut self.optimizer, &batch)?;
        }
        Ok(total / steps as f64)
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        let sizes = self.model.sizes().to_vec();
        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (w, b) = self.model.layer(l);
                let off = self.model.offset(l);
                let nw = w.len();
                let acc = &self.optimizer.accumulator;
                LayerCheckpoint {
                    weights: w.to_vec(),
                    biases: b.to_vec(),
                    weights_accumulator: acc[off..off + nw].to_vec(),
                    biases_accumulator: acc[off + nw..off + nw + b.len()].to_vec(),
                }
            })
            .collect();
        AgentCheckpoint {
            layer_sizes: sizes,
            layers,
            initial_params: self.initial.clone(),
            config: self.config.clone(),
            reward: self.reward,
            episodes_completed: self.episodes_completed,
            buffer: self.buffer.clone(),
            explore_rng: RngState::capture(&self.explore_rng),
            batch_rng: RngState::capture(&self.batch_rng),
        }
    }

    pub fn from_checkpoint(ck: &AgentCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        ck.reward.validate()?;
        let mut params = Vec::new();
        let mut acc = Vec::new();
        for layer in &ck.layers {
            params.extend(&layer.weights);
            params.extend(&layer.biases);
            acc.extend(&layer.weights_accumulator);
            acc.extend(&layer.biases_accumulator);
        }
        let model = Mlp::from_params(&ck.layer_sizes, params)?;
        if acc.len() != model.params().len() || ck.initial_params.len() != model.params().len() {
            return Err(Error::domain(
                "checkpoint accumulator or initial parameter length mismatch",
            ));
        }
        let mut optimizer = RmsProp::new(
            acc.len(),
            ck.config.learning_rate,
            ck.config.rmsprop_decay,
            ck.config.rmsprop_eps,
        );
        optimizer.accumulator = acc;
        Ok(Agent {
            config: ck.config.clone(),
            reward: ck.reward,
            model,
            initial: ck.initial_params.clone(),
            optimizer,
            buffer: ck.buffer.clone(),
            explore_rng: ck.explore_rng.restore(),
            batch_rng: ck.batch_rng.restore(),
            episodes_completed: ck.episodes_completed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub weights_accumulator: Vec<f64>,
    pub biases_accumulator: Vec<f64>,
}

/// Everything needed to resume an agent bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<LayerCheckpoint>,
    pub initial_params: Vec<f64>,
    pub config: AgentConfig,
    pub reward: RewardParams,
    pub episodes_completed: u64,
    pub buffer: ReplayBuffer,
    pub explore_rng: RngState,
    pub batch_rng: RngState,
}
