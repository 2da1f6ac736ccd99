use super::Result;
use crate::nn::{AdamConfig, AdamState};

/// Learnable entropy coefficient `alpha = exp(log_alpha)`, tuned toward a target entropy.
#[derive(Debug, Clone)]
pub struct EntropyTemperature {
    log_alpha: f64,
    target_entropy: f64,
    adam: AdamState,
}

impl EntropyTemperature {
    pub fn new(initial_alpha: f64, target_entropy: f64, lr: f64) -> Self {
        assert!(initial_alpha > 0.0, "alpha must be positive");
        EntropyTemperature {
            log_alpha: initial_alpha.ln(),
            target_entropy,
            adam: AdamState::for_shapes(&[1], AdamConfig::with_lr(lr)),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    pub fn learning_rate(&self) -> f64 {
        self.adam.config.lr
    }

    /// `-mean[alpha (log pi + H_target)]`.
    pub fn loss(&self, log_probs: &[f64]) -> f64 {
        -self.alpha() * self.mean_offset(log_probs)
    }

    /// Derivative of [`loss`](Self::loss) with respect to `log_alpha`.
    pub fn gradient(&self, log_probs: &[f64]) -> f64 {
        -self.alpha() * self.mean_offset(log_probs)
    }

    fn mean_offset(&self, log_probs: &[f64]) -> f64 {
        if log_probs.is_empty() {
            return 0.0;
        }
        log_probs
            .iter()
            .map(|lp| lp + self.target_entropy)
            .sum::<f64>()
            / log_probs.len() as f64
    }

    /// One Adam step on `log_alpha`; returns the new `alpha`.
    pub fn update(&mut self, log_probs: &[f64]) -> Result<f64> {
        let g = self.gradient(log_probs);
        let mut p = [self.log_alpha];
        self.adam.step(vec![&mut p[..]], &[&[g]])?;
        self.log_alpha = p[0];
        Ok(self.alpha())
    }
}
