use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws sample indices so that both classes appear with equal probability.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(labels: &[u8], seed: u64) -> Result<Self> {
        let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::precondition(format!(
                "balanced sampling needs both classes (got {} positive, {} negative)",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(Self {
            positives,
            negatives,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_index(&mut self) -> usize {
        let pool = if self.rng.random::<bool>() {
            &self.positives
        } else {
            &self.negatives
        };
        pool[self.rng.random_range(0..pool.len())]
    }
}
