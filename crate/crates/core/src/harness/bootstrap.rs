use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PAIRS: usize = 20;

/// Mean paired difference with a percentile bootstrap 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub seed: u64,
    /// The whole interval lies strictly above zero.
    pub better: bool,
}

pub fn paired_bootstrap(diffs: &[f64], resamples: usize, seed: u64) -> Result<Comparison> {
    if diffs.len() < MIN_PAIRS {
        return Err(Error::precondition(format!(
            "paired bootstrap needs at least {MIN_PAIRS} pairs, got {}",
            diffs.len()
        )));
    }
    if resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("paired differences must be finite"));
    }
    let n = diffs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let rank = |q: f64| means[((q * resamples as f64).ceil() as usize).clamp(1, resamples) - 1];
    let (ci_low, ci_high) = (rank(0.025), rank(0.975));
    Ok(Comparison {
        mean_diff: diffs.iter().sum::<f64>() / n as f64,
        ci_low,
        ci_high,
        resamples,
        seed,
        better: ci_low > 0.0,
    })
}

/// Paired differences `a_i − b_i`.
pub fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("cannot pair {} values with {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}
