use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Evaluation, Result};

/// Uniform random search: `budget` i.i.d. actions, best by reward (earliest on ties).
pub fn random_search_baseline<E: Environment + ?Sized>(
    env: &E,
    budget: usize,
    seed: u64,
) -> Result<(Vec<f64>, Evaluation)> {
    assert!(budget >= 1, "budget must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = env.action_dim();
    let mut best: Option<(Vec<f64>, Evaluation)> = None;
    for call in 0..budget {
        let action: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let eval = env.evaluate(&action, call as u64)?;
        if best.as_ref().is_none_or(|(_, b)| eval.reward > b.reward) {
            best = Some((action, eval));
        }
    }
    Ok(best.expect("budget >= 1"))
}
