use serde::{Deserialize, Serialize};

use super::{differences, mean_std, paired_bootstrap, Comparison, HarnessConfig, Verdict};
use crate::error::{Error, Result};
use crate::metrics::map_auprc;
use crate::saliency::Method;

/// Per-image AUPRC of one method against both localization baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityResult {
    pub method: Method,
    pub auprc: Vec<f64>,
    pub avg_auprc: Vec<f64>,
    pub base_auprc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub vs_avg: Comparison,
    pub vs_base: Comparison,
}

impl UtilityResult {
    pub fn verdict_avg(&self) -> Verdict {
        Verdict::from_bool(self.vs_avg.better)
    }

    pub fn verdict_base(&self) -> Verdict {
        Verdict::from_bool(self.vs_base.better)
    }
}

/// The segmenter baseline against the average-mask baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub avg_auprc: Vec<f64>,
    pub base_auprc: Vec<f64>,
    pub avg_mean: f64,
    pub avg_std: f64,
    pub base_mean: f64,
    pub base_std: f64,
    pub base_vs_avg: Comparison,
}

fn auprcs(maps: &[Vec<f32>], truths: &[Vec<u8>]) -> Result<Vec<f64>> {
    if maps.len() != truths.len() {
        return Err(Error::invalid(format!("{} maps for {} ground truths", maps.len(), truths.len())));
    }
    if truths.is_empty() {
        return Err(Error::precondition("utility test needs at least one positive image"));
    }
    maps.iter().zip(truths).map(|(m, t)| map_auprc(m, t)).collect()
}

fn constant_auprcs(map: &[f32], truths: &[Vec<u8>]) -> Result<Vec<f64>> {
    truths.iter().map(|t| map_auprc(map, t)).collect()
}

/// Scores `maps` (one per positive image, aligned with `truths`) by AUPRC and
/// compares them with the constant average-mask map and the segmenter's
/// probability maps by paired bootstrap.
pub fn utility_test(
    method: Method,
    maps: &[Vec<f32>],
    truths: &[Vec<u8>],
    avg_mask: &[f32],
    seg_maps: &[Vec<f32>],
    cfg: &HarnessConfig,
) -> Result<UtilityResult> {
    let auprc = auprcs(maps, truths)?;
    let avg_auprc = constant_auprcs(avg_mask, truths)?;
    let base_auprc = auprcs(seg_maps, truths)?;
    let (mean, std) = mean_std(&auprc);
    let vs_avg = paired_bootstrap(
        &differences(&auprc, &avg_auprc)?,
        cfg.bootstrap_resamples,
        cfg.stream(&format!("utility/{method}/avg")),
    )?;
    let vs_base = paired_bootstrap(
        &differences(&auprc, &base_auprc)?,
        cfg.bootstrap_resamples,
        cfg.stream(&format!("utility/{method}/base")),
    )?;
    Ok(UtilityResult {
        method,
        auprc,
        avg_auprc,
        base_auprc,
        mean,
        std,
        vs_avg,
        vs_base,
    })
}

pub fn baseline_comparison(
    truths: &[Vec<u8>],
    avg_mask: &[f32],
    seg_maps: &[Vec<f32>],
    cfg: &HarnessConfig,
) -> Result<BaselineComparison> {
    let avg_auprc = constant_auprcs(avg_mask, truths)?;
    let base_auprc = auprcs(seg_maps, truths)?;
    let (avg_mean, avg_std) = mean_std(&avg_auprc);
    let (base_mean, base_std) = mean_std(&base_auprc);
    let base_vs_avg = paired_bootstrap(
        &differences(&base_auprc, &avg_auprc)?,
        cfg.bootstrap_resamples,
        cfg.stream("utility/base/avg"),
    )?;
    Ok(BaselineComparison {
        avg_auprc,
        base_auprc,
        avg_mean,
        avg_std,
        base_mean,
        base_std,
        base_vs_avg,
    })
}
