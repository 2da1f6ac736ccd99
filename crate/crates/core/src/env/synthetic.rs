//! Synthetic reward landscapes over the unit cube.
//!
//! Each bump contributes `height * exp(-|a - center|^2 / (2 width^2))`; the
//! reward is the maximum over bumps, plus optional Gaussian noise clamped back
//! into `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvError, Environment, Evaluation, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    #[serde(default = "one")]
    pub height: f64,
}

fn one() -> f64 {
    1.0
}

/// Landscape configuration as it appears in experiment config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LandscapeConfig {
    GaussianBump {
        optimum: Vec<f64>,
        width: f64,
        #[serde(default)]
        seed: u64,
    },
    MultiBump {
        bumps: Vec<Bump>,
        width: f64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    NoisyBump {
        optimum: Vec<f64>,
        width: f64,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLandscape {
    config: LandscapeConfig,
    bumps: Vec<Bump>,
    width: f64,
    noise: f64,
    seed: u64,
    name: String,
}

impl SyntheticLandscape {
    pub fn gaussian_bump(optimum: Vec<f64>, width: f64) -> Result<Self> {
        Self::from_config(LandscapeConfig::GaussianBump {
            optimum,
            width,
            seed: 0,
        })
    }

    pub fn from_config(config: LandscapeConfig) -> Result<Self> {
        let (bumps, width, noise, seed, name) = match &config {
            LandscapeConfig::GaussianBump {
                optimum,
                width,
                seed,
            } => (
                vec![Bump {
                    center: optimum.clone(),
                    height: 1.0,
                }],
                *width,
                0.0,
                *seed,
                "gaussian-bump",
            ),
            LandscapeConfig::NoisyBump {
                optimum,
                width,
                noise,
                seed,
            } => (
                vec![Bump {
                    center: optimum.clone(),
                    height: 1.0,
                }],
                *width,
                *noise,
                *seed,
                "noisy-bump",
            ),
            LandscapeConfig::MultiBump {
                bumps,
                width,
                noise,
                seed,
            } => (bumps.clone(), *width, *noise, *seed, "multi-bump"),
        };
        let invalid = |m: String| Err(EnvError::InvalidConfig(m));
        if bumps.is_empty() {
            return invalid("landscape needs at least one bump".into());
        }
        let dim = bumps[0].center.len();
        if dim == 0 {
            return invalid("bump centers must be non-empty".into());
        }
        for b in &bumps {
            if b.center.len() != dim {
                return invalid("bump centers disagree on dimension".into());
            }
            if b.center.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return invalid(format!("bump center {:?} outside the unit cube", b.center));
            }
            if !(b.height > 0.0 && b.height <= 1.0) {
                return invalid(format!("bump height {} outside (0, 1]", b.height));
            }
        }
        if !bumps.iter().any(|b| b.height == 1.0) {
            return invalid("the tallest bump must have height 1".into());
        }
        if !(width > 0.0 && width.is_finite()) {
            return invalid(format!("width {width} must be positive"));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return invalid(format!("noise {noise} must be non-negative"));
        }
        Ok(SyntheticLandscape {
            config,
            bumps,
            width,
            noise,
            seed,
            name: name.to_string(),
        })
    }

    pub fn config(&self) -> &LandscapeConfig {
        &self.config
    }

    /// Location of the global maximum (the first height-1 bump).
    pub fn optimum(&self) -> &[f64] {
        &self
            .bumps
            .iter()
            .find(|b| b.height == 1.0)
            .expect("validated")
            .center
    }

    pub fn noiseless(&self, action: &[f64]) -> f64 {
        let two_w2 = 2.0 * self.width * self.width;
        self.bumps
            .iter()
            .map(|b| {
                let d2: f64 = b
                    .center
                    .iter()
                    .zip(action)
                    .map(|(c, a)| (a - c) * (a - c))
                    .sum();
                b.height * (-d2 / two_w2).exp()
            })
            .fold(0.0, f64::max)
    }

    pub fn reward(&self, action: &[f64], call: u64) -> f64 {
        let clean = self.noiseless(action);
        if self.noise == 0.0 {
            return clean;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(call);
        let xi: f64 = rng.sample(StandardNormal);
        (clean + self.noise * xi).clamp(0.0, 1.0)
    }
}

impl Environment for SyntheticLandscape {
    fn action_dim(&self) -> usize {
        self.bumps[0].center.len()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, action: &[f64], call: u64) -> Result<Evaluation> {
        check_action(action, self.action_dim())?;
        Ok(Evaluation::reward(self.reward(action, call)))
    }
}
