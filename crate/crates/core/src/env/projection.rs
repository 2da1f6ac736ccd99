use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, Result};

/// Fixed random linear map from the action space to the soft-prompt space.
///
/// Entries are i.i.d. `Uniform(-1, 1)`, drawn once from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    entries: Vec<f64>,
    seed: u64,
}

impl ProjectionMatrix {
    /// `rows` is the soft-prompt dimension, `cols` the action dimension.
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        ProjectionMatrix {
            rows,
            cols,
            entries,
            seed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    /// Column `col` as a dense vector of length `rows`.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.entry(r, col)).collect()
    }

    /// `z = P a`.
    pub fn project(&self, action: &[f64]) -> Result<Vec<f64>> {
        check_action(action, self.cols)?;
        Ok(self
            .entries
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(action).map(|(p, a)| p * a).sum())
            .collect())
    }
}
