//! Black-box environments: an action in `[0, 1]^d'` goes in, a reward in `[0, 1]` comes out.

mod baseline;
mod projection;
mod synthetic;

use thiserror::Error;

pub use baseline::random_search_baseline;
pub use projection::ProjectionMatrix;
pub use synthetic::{Bump, LandscapeConfig, SyntheticLandscape};

use crate::llm::LlmError;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Outcome of one reward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    /// Decoded instruction, for environments that produce one.
    pub instruction: Option<String>,
}

impl Evaluation {
    pub fn reward(reward: f64) -> Self {
        Evaluation {
            reward,
            instruction: None,
        }
    }
}

/// A stateless reward oracle.
///
/// `call` identifies the evaluation; stochastic environments derive their noise
/// from it so that concurrent calls stay reproducible.
pub trait Environment: Sync {
    fn action_dim(&self) -> usize;

    fn name(&self) -> &str;

    fn evaluate(&self, action: &[f64], call: u64) -> Result<Evaluation>;

    /// Scores an already-evaluated candidate again. Instruction-producing
    /// environments re-score the instruction text instead of re-decoding.
    fn reevaluate(&self, action: &[f64], _instruction: Option<&str>, call: u64) -> Result<f64> {
        self.evaluate(action, call).map(|e| e.reward)
    }

    /// Black-box completions issued so far, for environments backed by one.
    fn completions(&self) -> Option<u64> {
        None
    }
}

pub(crate) fn check_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(EnvError::Shape {
            expected: dim,
            got: action.len(),
        });
    }
    Ok(())
}
