//! Squashed diagonal-Gaussian policy over the unit cube.
//!
//! A draw is `u = mean + exp(log_std) * noise`, squashed coordinatewise to
//! `a = (tanh(u) + 1) / 2`, so every action lies strictly inside `(0, 1)^d`.
//! The log-density of `a` is the Gaussian log-density of `u` minus
//! `sum_i log((1 - tanh(u_i)^2) / 2)`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ActionValue, AgentError, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, ForwardCache};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Keeps squashed coordinates away from the boundary when inverting the squash.
const SQUASH_EDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log((1 - tanh(u)^2) / 2)`, stable for large `|u|`.
pub fn log_squash_jacobian(u: f64) -> f64 {
    std::f64::consts::LN_2 - 2.0 * u - 2.0 * softplus(-2.0 * u)
}

pub fn squash(u: f64) -> f64 {
    (u.tanh() + 1.0) / 2.0
}

pub fn unsquash(a: f64) -> f64 {
    let a = a.clamp(SQUASH_EDGE, 1.0 - SQUASH_EDGE);
    (2.0 * a - 1.0).atanh()
}

/// Log-density of the squashed action produced by pre-squash value `u`.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((&m, &s), &ui)| {
            let z = (ui - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_2PI - log_squash_jacobian(ui)
        })
        .sum()
}

/// Reparameterized draw for fixed standard-normal `noise`.
pub fn sample_with_noise(mean: &[f64], log_std: &[f64], noise: &[f64]) -> SampledAction {
    let pre_squash: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .zip(noise)
        .map(|((&m, &s), &xi)| m + s.exp() * xi)
        .collect();
    let action = pre_squash.iter().map(|&u| squash(u)).collect();
    let log_prob = mean
        .iter()
        .zip(log_std)
        .zip(noise.iter().zip(&pre_squash))
        .map(|((_, &s), (&xi, &u))| -0.5 * xi * xi - s - HALF_LN_2PI - log_squash_jacobian(u))
        .sum();
    SampledAction {
        action,
        pre_squash,
        log_prob,
    }
}

pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Value and gradient of `mean_k [alpha * log pi(a_k) - Q(a_k)]` with respect to
/// the distribution parameters, for fixed reparameterization noise.
#[derive(Debug, Clone)]
pub struct ReparamObjective {
    pub loss: f64,
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn reparam_objective(
    mean: &[f64],
    log_std: &[f64],
    noises: &[Vec<f64>],
    alpha: f64,
    q: Option<&dyn ActionValue>,
) -> Result<ReparamObjective> {
    let dim = mean.len();
    let n = noises.len().max(1) as f64;
    let mut d_mean = vec![0.0; dim];
    let mut d_log_std = vec![0.0; dim];
    let mut loss = 0.0;
    let mut log_probs = Vec::with_capacity(noises.len());
    let samples: Vec<SampledAction> = noises
        .iter()
        .map(|noise| sample_with_noise(mean, log_std, noise))
        .collect();
    let q_values = match q {
        Some(q) => {
            let actions: Vec<Vec<f64>> = samples.iter().map(|s| s.action.clone()).collect();
            q.values_and_gradients(&actions)?
        }
        None => vec![(0.0, vec![0.0; dim]); samples.len()],
    };
    for ((noise, sample), (q_val, q_grad)) in noises.iter().zip(&samples).zip(q_values) {
        loss += alpha * sample.log_prob - q_val;
        log_probs.push(sample.log_prob);
        for i in 0..dim {
            let u = sample.pre_squash[i];
            let t = u.tanh();
            let sigma = log_std[i].exp();
            // d log pi / du (noise held fixed) and da/du.
            let dlp_du = 2.0 * t;
            let da_du = (1.0 - t * t) / 2.0;
            let dl_du = alpha * dlp_du - q_grad[i] * da_du;
            d_mean[i] += dl_du;
            d_log_std[i] += dl_du * sigma * noise[i] - alpha;
        }
    }
    d_mean.iter_mut().for_each(|g| *g /= n);
    d_log_std.iter_mut().for_each(|g| *g /= n);
    Ok(ReparamObjective {
        loss: loss / n,
        d_mean,
        d_log_std,
        log_probs,
    })
}

/// Score-function surrogate `-mean_j [log pi(a_j) (r_j - baseline)]` over
/// observed pairs, plus its gradient with respect to the distribution parameters.
pub fn score_function_objective(
    mean: &[f64],
    log_std: &[f64],
    observed: &[(Vec<f64>, f64)],
    baseline: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = mean.len();
    let n = observed.len().max(1) as f64;
    let mut d_mean = vec![0.0; dim];
    let mut d_log_std = vec![0.0; dim];
    let mut loss = 0.0;
    for (action, reward) in observed {
        let u: Vec<f64> = action.iter().map(|&a| unsquash(a)).collect();
        let advantage = reward - baseline;
        loss -= squashed_log_prob(mean, log_std, &u) * advantage;
        for i in 0..dim {
            let sigma = log_std[i].exp();
            let z = (u[i] - mean[i]) / sigma;
            d_mean[i] -= advantage * z / sigma;
            d_log_std[i] -= advantage * (z * z - 1.0);
        }
    }
    d_mean.iter_mut().for_each(|g| *g /= n);
    d_log_std.iter_mut().for_each(|g| *g /= n);
    (loss / n, d_mean, d_log_std)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorKind {
    /// Network with a constant scalar input emitting `[mean, log_std]`.
    Mlp,
    /// Free mean and log-std vectors.
    Direct,
}

#[derive(Debug, Clone)]
enum Params {
    Mlp(DenseNet),
    Direct { mean: Vec<f64>, log_std: Vec<f64> },
}

/// The actor. Both variants expose the same distribution interface.
#[derive(Debug, Clone)]
pub struct ActorPolicy {
    params: Params,
    action_dim: usize,
    adam: AdamState,
    grad_clip: f64,
}

/// Distribution parameters with the clamp already applied.
#[derive(Debug, Clone)]
pub struct Distribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// `true` where the raw log-std sat inside the clamp range.
    free_log_std: Vec<bool>,
    cache: Option<ForwardCache>,
}

impl ActorPolicy {
    /// Network actor `1 - hidden... - 2*action_dim`.
    ///
    /// The output layer's initial weights are multiplied by `output_scale`.
    pub fn mlp(
        action_dim: usize,
        hidden: &[usize],
        output_scale: f64,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        if action_dim == 0 {
            return Err(AgentError::InvalidConfig(
                "action dimension must be positive".into(),
            ));
        }
        let mut signature = vec![1];
        signature.extend_from_slice(hidden);
        signature.push(2 * action_dim);
        let mut net = DenseNet::new(&signature, Activation::Relu, seed)?;
        net.scale_output_layer(output_scale);
        let adam = AdamState::for_net(&net, AdamConfig::with_lr(lr));
        Ok(ActorPolicy {
            params: Params::Mlp(net),
            action_dim,
            adam,
            grad_clip: f64::INFINITY,
        })
    }

    /// Directly parameterized actor starting at `mean = 0`, `log_std = 0`.
    pub fn direct(action_dim: usize, lr: f64) -> Result<Self> {
        if action_dim == 0 {
            return Err(AgentError::InvalidConfig(
                "action dimension must be positive".into(),
            ));
        }
        Ok(ActorPolicy {
            params: Params::Direct {
                mean: vec![0.0; action_dim],
                log_std: vec![0.0; action_dim],
            },
            action_dim,
            adam: AdamState::for_shapes(&[action_dim, action_dim], AdamConfig::with_lr(lr)),
            grad_clip: f64::INFINITY,
        })
    }

    pub fn with_grad_clip(mut self, max_norm: f64) -> Self {
        self.grad_clip = max_norm;
        self
    }

    pub fn kind(&self) -> ActorKind {
        match self.params {
            Params::Mlp(_) => ActorKind::Mlp,
            Params::Direct { .. } => ActorKind::Direct,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn network(&self) -> Option<&DenseNet> {
        match &self.params {
            Params::Mlp(net) => Some(net),
            Params::Direct { .. } => None,
        }
    }

    /// Raw parameter tensors (network layers, or `[mean, log_std]`).
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.params {
            Params::Mlp(net) => net.params_mut(),
            Params::Direct { mean, log_std } => vec![mean.as_mut_slice(), log_std.as_mut_slice()],
        }
    }

    pub fn distribution(&self) -> Result<Distribution> {
        let (mean, raw_log_std, cache) = match &self.params {
            Params::Mlp(net) => {
                let cache = net.forward(&[1.0])?;
                let out = cache.output();
                let (m, s) = out.split_at(self.action_dim);
                (m.to_vec(), s.to_vec(), Some(cache))
            }
            Params::Direct { mean, log_std } => (mean.clone(), log_std.clone(), None),
        };
        if mean.iter().chain(&raw_log_std).any(|x| !x.is_finite()) {
            return Err(AgentError::NonFinite("policy parameters".into()));
        }
        let free_log_std = raw_log_std
            .iter()
            .map(|&s| (LOG_STD_MIN..=LOG_STD_MAX).contains(&s))
            .collect();
        let log_std = raw_log_std
            .iter()
            .map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Distribution {
            mean,
            log_std,
            free_log_std,
            cache,
        })
    }

    /// Samples one action using `rng` for the reparameterization noise.
    pub fn act<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SampledAction> {
        let dist = self.distribution()?;
        let noise = draw_noise(rng, self.action_dim);
        let sample = sample_with_noise(&dist.mean, &dist.log_std, &noise);
        if !sample.log_prob.is_finite() {
            return Err(AgentError::NonFinite("log-probability".into()));
        }
        Ok(sample)
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim {
            return Err(AgentError::Shape {
                expected: self.action_dim,
                got: action.len(),
            });
        }
        let dist = self.distribution()?;
        let u: Vec<f64> = action.iter().map(|&a| unsquash(a)).collect();
        Ok(squashed_log_prob(&dist.mean, &dist.log_std, &u))
    }

    /// Entropy-regularized objective and its gradient with respect to every raw
    /// actor parameter, at fixed noise.
    pub fn objective_gradient(
        &self,
        noises: &[Vec<f64>],
        alpha: f64,
        q: Option<&dyn ActionValue>,
    ) -> Result<(ReparamObjective, Vec<Vec<f64>>)> {
        let dist = self.distribution()?;
        let obj = reparam_objective(&dist.mean, &dist.log_std, noises, alpha, q)?;
        let grads = self.param_gradient(&dist, &obj.d_mean, &obj.d_log_std)?;
        Ok((obj, grads))
    }

    /// Objective value only, for finite-difference checks.
    pub fn objective(
        &self,
        noises: &[Vec<f64>],
        alpha: f64,
        q: Option<&dyn ActionValue>,
    ) -> Result<f64> {
        let dist = self.distribution()?;
        Ok(reparam_objective(&dist.mean, &dist.log_std, noises, alpha, q)?.loss)
    }

    /// Chain rule from distribution-parameter gradients to raw parameter tensors.
    fn param_gradient(
        &self,
        dist: &Distribution,
        d_mean: &[f64],
        d_log_std: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let masked: Vec<f64> = d_log_std
            .iter()
            .zip(&dist.free_log_std)
            .map(|(&g, &free)| if free { g } else { 0.0 })
            .collect();
        match &self.params {
            Params::Mlp(net) => {
                let mut upstream = d_mean.to_vec();
                upstream.extend_from_slice(&masked);
                let cache = dist.cache.as_ref().expect("network actor has a cache");
                let (bundle, _) = net.backward(cache, &upstream)?;
                Ok(bundle.tensors().into_iter().map(|t| t.to_vec()).collect())
            }
            Params::Direct { .. } => Ok(vec![d_mean.to_vec(), masked]),
        }
    }

    /// Clips and applies one Adam step given distribution-parameter gradients.
    pub fn apply_gradient(&mut self, d_mean: &[f64], d_log_std: &[f64]) -> Result<()> {
        let dist = self.distribution()?;
        let mut grads = self.param_gradient(&dist, d_mean, d_log_std)?;
        let norm = grads
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > self.grad_clip && norm.is_finite() {
            let scale = self.grad_clip / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
        }
        let views: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        let params = match &mut self.params {
            Params::Mlp(net) => net.params_mut(),
            Params::Direct { mean, log_std } => vec![mean.as_mut_slice(), log_std.as_mut_slice()],
        };
        self.adam.step(params, &views)?;
        if let Params::Direct { log_std, .. } = &mut self.params {
            log_std
                .iter_mut()
                .for_each(|s| *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX));
        }
        Ok(())
    }

    /// One Adam step on `mean_k [alpha log pi - Q]` with fresh `noises`.
    pub fn update(
        &mut self,
        noises: &[Vec<f64>],
        alpha: f64,
        q: &dyn ActionValue,
    ) -> Result<ReparamObjective> {
        let dist = self.distribution()?;
        let obj = reparam_objective(&dist.mean, &dist.log_std, noises, alpha, Some(q))?;
        self.apply_gradient(&obj.d_mean, &obj.d_log_std)?;
        Ok(obj)
    }

    /// One Adam step on the critic-free surrogate: the score-function term over
    /// `observed` plus the reparameterized entropy term over `noises`.
    pub fn update_policy_gradient(
        &mut self,
        observed: &[(Vec<f64>, f64)],
        baseline: f64,
        noises: &[Vec<f64>],
        alpha: f64,
    ) -> Result<ReparamObjective> {
        let dist = self.distribution()?;
        let (pg_loss, pg_mean, pg_log_std) =
            score_function_objective(&dist.mean, &dist.log_std, observed, baseline);
        let mut obj = reparam_objective(&dist.mean, &dist.log_std, noises, alpha, None)?;
        obj.loss += pg_loss;
        obj.d_mean
            .iter_mut()
            .zip(&pg_mean)
            .for_each(|(g, p)| *g += p);
        obj.d_log_std
            .iter_mut()
            .zip(&pg_log_std)
            .for_each(|(g, p)| *g += p);
        self.apply_gradient(&obj.d_mean, &obj.d_log_std)?;
        Ok(obj)
    }

    /// Sets the direct variant's parameters (clamping log-std); network actors are
    /// unaffected and report an error.
    pub fn set_direct(&mut self, new_mean: &[f64], new_log_std: &[f64]) -> Result<()> {
        match &mut self.params {
            Params::Direct { mean, log_std } => {
                if new_mean.len() != mean.len() || new_log_std.len() != log_std.len() {
                    return Err(AgentError::Shape {
                        expected: mean.len(),
                        got: new_mean.len(),
                    });
                }
                mean.copy_from_slice(new_mean);
                for (dst, &s) in log_std.iter_mut().zip(new_log_std) {
                    *dst = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
                Ok(())
            }
            Params::Mlp(_) => Err(AgentError::UnsupportedVariant(
                "set_direct on a network actor".into(),
            )),
        }
    }
}
