//! Stateless entropy-regularized actor-critic for continuum-armed bandits.
//!
//! Each environment step is one `propose -> evaluate -> train_step` cycle. After a
//! uniform warm-up the agent performs, per step, one critic update on a batch from
//! the replay buffer, one actor update on fresh reparameterized samples, and one
//! temperature update.

mod buffer;
mod critic;
pub mod policy;
mod temperature;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::ReplayBuffer;
pub use critic::{CriticCount, CriticPair};
pub use policy::{ActorKind, ActorPolicy, SampledAction};
pub use temperature::EntropyTemperature;

use crate::nn::NnError;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("reward {0} outside [0, 1]")]
    InvalidReward(f64),
    #[error("unsupported for this variant: {0}")]
    UnsupportedVariant(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// Anything that scores an action and exposes the gradient of that score.
pub trait ActionValue {
    fn value_and_gradient(&self, action: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn values_and_gradients(&self, actions: &[Vec<f64>]) -> Result<Vec<(f64, Vec<f64>)>> {
        actions.iter().map(|a| self.value_and_gradient(a)).collect()
    }
}

impl<F> ActionValue for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn value_and_gradient(&self, action: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(self(action))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AgentVariant {
    #[default]
    TwoCritic,
    OneCritic,
    NoCritic,
    DirectActor,
}

impl AgentVariant {
    pub fn critics(self) -> CriticCount {
        match self {
            AgentVariant::TwoCritic | AgentVariant::DirectActor => CriticCount::Two,
            AgentVariant::OneCritic => CriticCount::One,
            AgentVariant::NoCritic => CriticCount::None,
        }
    }

    pub fn actor(self) -> ActorKind {
        match self {
            AgentVariant::DirectActor => ActorKind::Direct,
            _ => ActorKind::Mlp,
        }
    }
}

impl std::str::FromStr for AgentVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "two-critic" => Ok(AgentVariant::TwoCritic),
            "one-critic" => Ok(AgentVariant::OneCritic),
            "no-critic" => Ok(AgentVariant::NoCritic),
            "direct-actor" => Ok(AgentVariant::DirectActor),
            other => Err(format!(
                "unknown variant {other:?} (expected two-critic, one-critic, no-critic or direct-actor)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub action_dim: usize,
    pub variant: AgentVariant,
    pub actor_hidden: Vec<usize>,
    /// Multiplier on the actor's initial output-layer weights.
    pub actor_output_scale: f64,
    pub critic_hidden: Vec<usize>,
    /// Multiplier on each critic's initial output-layer weights.
    pub critic_output_scale: f64,
    /// Gradient steps taken by each network per environment step.
    pub updates_per_step: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Defaults to `-action_dim` when unset.
    pub target_entropy: Option<f64>,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub buffer_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            action_dim: 10,
            variant: AgentVariant::TwoCritic,
            actor_hidden: vec![1024, 256],
            actor_output_scale: DEFAULT_OUTPUT_SCALE,
            critic_hidden: vec![128, 128],
            critic_output_scale: DEFAULT_OUTPUT_SCALE,
            updates_per_step: 1,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 9e-4,
            initial_alpha: DEFAULT_INITIAL_ALPHA,
            target_entropy: None,
            warmup_steps: 10,
            batch_size: 64,
            grad_clip: 10.0,
            buffer_capacity: 165,
        }
    }
}

pub const DEFAULT_INITIAL_ALPHA: f64 = 0.01;
/// Multiplier on the freshly initialized output layer of the actor and critics,
/// so early value estimates and policy means start close to zero.
pub const DEFAULT_OUTPUT_SCALE: f64 = 0.01;

impl AgentConfig {
    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if self.action_dim == 0 {
            return bad("action_dim must be positive");
        }
        if self.updates_per_step == 0 {
            return bad("updates_per_step must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.initial_alpha > 0.0 && self.initial_alpha.is_finite()) {
            return bad("initial_alpha must be positive and finite");
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(AgentError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Per-step training record, serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub step: usize,
    pub reward: f64,
    pub best_reward: f64,
    pub actor_loss: Option<f64>,
    pub critic_losses: Vec<f64>,
    pub alpha: f64,
    pub entropy_estimate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    policy: ActorPolicy,
    critics: CriticPair,
    temperature: EntropyTemperature,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: usize,
    best_reward: f64,
    reward_sum: f64,
}

impl Agent {
    /// Builds an agent; every random stream is derived from `seed`.
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dim = config.action_dim;
        let policy = match config.variant.actor() {
            ActorKind::Mlp => ActorPolicy::mlp(
                dim,
                &config.actor_hidden,
                config.actor_output_scale,
                config.actor_lr,
                seed,
            )?,
            ActorKind::Direct => ActorPolicy::direct(dim, config.actor_lr)?,
        }
        .with_grad_clip(config.grad_clip);
        let critics = CriticPair::new(
            config.variant.critics(),
            dim,
            &config.critic_hidden,
            config.critic_output_scale,
            config.critic_lr,
            seed.wrapping_add(1_000),
        )?
        .with_grad_clip(config.grad_clip);
        let temperature = EntropyTemperature::new(
            config.initial_alpha,
            config.target_entropy(),
            config.alpha_lr,
        );
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        Ok(Agent {
            policy,
            critics,
            temperature,
            buffer,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11c_e000_0000),
            steps: 0,
            best_reward: f64::NEG_INFINITY,
            reward_sum: 0.0,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> &ActorPolicy {
        &self.policy
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn temperature(&self) -> &EntropyTemperature {
        &self.temperature
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn in_warmup(&self) -> bool {
        self.steps < self.config.warmup_steps
    }

    /// Next action: uniform during warm-up, then a policy sample.
    pub fn propose(&mut self) -> Result<SampledAction> {
        if self.in_warmup() {
            let action: Vec<f64> = (0..self.config.action_dim)
                .map(|_| self.rng.random::<f64>())
                .collect();
            let pre_squash = action.iter().map(|&a| policy::unsquash(a)).collect();
            let log_prob = self.policy.log_prob(&action)?;
            return Ok(SampledAction {
                action,
                pre_squash,
                log_prob,
            });
        }
        self.policy.act(&mut self.rng)
    }

    fn fresh_noise(&mut self) -> Vec<Vec<f64>> {
        (0..self.config.batch_size)
            .map(|_| policy::draw_noise(&mut self.rng, self.config.action_dim))
            .collect()
    }

    /// Critic update on a uniformly drawn batch of `min(batch_size, len)` entries.
    pub fn update_critics(&mut self) -> Result<Vec<f64>> {
        if self.critics.count() == CriticCount::None {
            return Ok(Vec::new());
        }
        let batch = self.buffer.sample(&mut self.rng, self.config.batch_size);
        self.critics.update(&batch)
    }

    /// One actor step; returns the loss estimate and the sampled log-probabilities.
    pub fn update_actor(&mut self) -> Result<(f64, Vec<f64>)> {
        let noises = self.fresh_noise();
        let alpha = self.temperature.alpha();
        let obj = if self.critics.count() == CriticCount::None {
            let recent = self.buffer.recent(self.config.batch_size);
            let baseline = self.reward_sum / self.steps.max(1) as f64;
            self.policy
                .update_policy_gradient(&recent, baseline, &noises, alpha)?
        } else {
            self.policy.update(&noises, alpha, &self.critics)?
        };
        Ok((obj.loss, obj.log_probs))
    }

    pub fn update_temperature(&mut self, log_probs: &[f64]) -> Result<f64> {
        self.temperature.update(log_probs)
    }

    /// Records an observation and, after warm-up, updates critics, actor and temperature.
    pub fn train_step(&mut self, action: &[f64], reward: f64) -> Result<Diagnostics> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(AgentError::InvalidReward(reward));
        }
        if action.len() != self.config.action_dim {
            return Err(AgentError::Shape {
                expected: self.config.action_dim,
                got: action.len(),
            });
        }
        self.buffer.push(action.to_vec(), reward)?;
        self.steps += 1;
        self.reward_sum += reward;
        self.best_reward = self.best_reward.max(reward);
        let mut diag = Diagnostics {
            step: self.steps,
            reward,
            best_reward: self.best_reward,
            actor_loss: None,
            critic_losses: Vec::new(),
            alpha: self.temperature.alpha(),
            entropy_estimate: None,
        };
        if self.steps <= self.config.warmup_steps {
            return Ok(diag);
        }
        for _ in 0..self.config.updates_per_step {
            diag.critic_losses = self.update_critics()?;
            let (actor_loss, log_probs) = self.update_actor()?;
            diag.actor_loss = Some(actor_loss);
            diag.entropy_estimate =
                Some(-log_probs.iter().sum::<f64>() / log_probs.len().max(1) as f64);
            diag.alpha = self.update_temperature(&log_probs)?;
        }
        Ok(diag)
    }
}
