use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use super::{AgentError, Result};

/// Observed `(action, reward)` pairs in insertion order, oldest evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<(Vec<f64>, f64)>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            entries: VecDeque::with_capacity(capacity.min(4096)),
            capacity: capacity.max(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(AgentError::InvalidReward(reward));
        }
        if action.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(AgentError::InvalidArgument("action outside [0, 1]".into()));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((action, reward));
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, f64)> {
        self.entries.iter()
    }

    /// `min(size, len)` distinct entries drawn uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Vec<(Vec<f64>, f64)> {
        let n = size.min(self.entries.len());
        if n == self.entries.len() {
            return self.entries.iter().cloned().collect();
        }
        index::sample(rng, self.entries.len(), n)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect()
    }

    /// The last `min(size, len)` entries, oldest first.
    pub fn recent(&self, size: usize) -> Vec<(Vec<f64>, f64)> {
        let n = size.min(self.entries.len());
        self.entries
            .iter()
            .skip(self.entries.len() - n)
            .cloned()
            .collect()
    }
}
