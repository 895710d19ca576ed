//! The four trust tests (utility, cascading randomization, repeatability,
//! reproducibility), the statistics behind their verdicts, and the report.

mod bootstrap;
mod consistency;
mod maps;
mod randomization;
mod report;
mod utility;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use bootstrap::{differences, paired_bootstrap, Comparison, MIN_PAIRS};
pub use consistency::{
    consistency_from_maps, repeatability_test, replicate_baseline, reproducibility_test, ConsistencyKind,
    ConsistencyResult, ReplicateBaseline,
};
pub use maps::{compute_map_set, MapSet};
pub use randomization::{
    cascading_randomization, randomize_blocks, select_sample, threshold_pairs, RandomizationOutcome,
    RandomizationTrace, TracePoint,
};
pub use report::{
    build_report, compute_grid, DatasetSummary, GridRow, ModelSummary, ReportInputs, TrustReport, UtilitySection,
    GRID_COLUMNS, REPORT_SCHEMA,
};
pub use utility::{baseline_comparison, utility_test, BaselineComparison, UtilityResult};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub bootstrap_resamples: usize,
    /// Images whose maps feed the randomization, repeatability and
    /// reproducibility tests.
    pub sample_size: usize,
    /// Random map pairs averaged into each degradation threshold.
    pub threshold_pairs: usize,
    /// Standard deviation of the truncated normal used to re-draw weights.
    pub randomization_sigma: f32,
    /// Similarity a consistency test must exceed for the LOW column.
    pub low_ssim: f64,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 10_000,
            sample_size: 64,
            threshold_pairs: 50,
            randomization_sigma: 0.05,
            low_ssim: 0.5,
            seed: 0,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bootstrap_resamples == 0 {
            return Err(Error::invalid("bootstrap_resamples must be at least 1"));
        }
        if self.sample_size < MIN_PAIRS {
            return Err(Error::invalid(format!("sample_size must be at least {MIN_PAIRS}")));
        }
        if self.threshold_pairs == 0 {
            return Err(Error::invalid("threshold_pairs must be at least 1"));
        }
        if !(self.randomization_sigma > 0.0 && self.randomization_sigma.is_finite()) {
            return Err(Error::invalid("randomization_sigma must be positive"));
        }
        Ok(())
    }

    /// Seed of an independent stream named by `tag`.
    pub fn stream(&self, tag: &str) -> u64 {
        seed::derive(self.seed, seed::hash_str(tag))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
