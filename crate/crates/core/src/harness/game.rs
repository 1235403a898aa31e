use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{EvalTriple, Membership};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub trials: usize,
    pub successes: usize,
    /// Trials drawn for each class, in label order.
    pub per_class_trials: [usize; 3],
    /// Success rate within each class; 0 for a class never drawn.
    pub per_class_accuracy: [f64; 3],
}

impl GameResult {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// The membership game. Each trial draws `b` uniformly from the three
/// classes, draws an index uniformly (with replacement) from that class's
/// pool, and asks `adversary` for a guess.
pub fn play_game<A>(pools: &EvalTriple, trials: usize, seed: u64, mut adversary: A) -> Result<GameResult>
where
    A: FnMut(usize) -> Result<Membership>,
{
    if trials == 0 {
        return Err(Error::config("the game needs at least one trial"));
    }
    if let Some(m) = Membership::ALL.iter().find(|m| pools.role(**m).is_empty()) {
        return Err(Error::data(format!("{} pool is empty", m.name())));
    }
    let mut rng = rng::seeded(seed, stream::SHUFFLE);
    let mut per_class_trials = [0usize; 3];
    let mut per_class_hits = [0usize; 3];
    for _ in 0..trials {
        let b = Membership::from_label(rng.random_range(0..3))?;
        let pool = pools.role(b);
        let z = pool[rng.random_range(0..pool.len())];
        per_class_trials[b.label()] += 1;
        if adversary(z)? == b {
            per_class_hits[b.label()] += 1;
        }
    }
    let mut per_class_accuracy = [0.0; 3];
    for k in 0..3 {
        if per_class_trials[k] > 0 {
            per_class_accuracy[k] = per_class_hits[k] as f64 / per_class_trials[k] as f64;
        }
    }
    Ok(GameResult { trials, successes: per_class_hits.iter().sum(), per_class_trials, per_class_accuracy })
}

/// Adversary that looks the index up in the true pools.
pub fn oracle_adversary(pools: &EvalTriple) -> impl FnMut(usize) -> Result<Membership> + '_ {
    move |z| pools.role_of(z).ok_or_else(|| Error::data(format!("index {z} is in no pool")))
}
