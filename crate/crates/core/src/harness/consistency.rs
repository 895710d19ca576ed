use std::fmt;

use serde::{Deserialize, Serialize};

use super::{compute_map_set, differences, mean_std, paired_bootstrap, Comparison, HarnessConfig, MapSet, Verdict};
use crate::error::{Error, Result};
use crate::metrics::{ssim, SsimConfig};
use crate::models::TrainedModel;
use crate::saliency::{Method, SaliencyConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyKind {
    /// Two replicates of one architecture.
    Repeatability,
    /// Two different architectures.
    Reproducibility,
}

impl fmt::Display for ConsistencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConsistencyKind::Repeatability => "repeatability",
            ConsistencyKind::Reproducibility => "reproducibility",
        })
    }
}

/// Per-image SSIM between the maps of two models for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub kind: ConsistencyKind,
    pub method: Method,
    pub ssim: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Similarity the mean must exceed for the LOW column.
    pub low: f64,
    /// Against the segmenter-replicate SSIMs on the same images.
    pub vs_base: Comparison,
}

impl ConsistencyResult {
    pub fn verdict_low(&self) -> Verdict {
        Verdict::from_bool(self.mean > self.low)
    }

    pub fn verdict_base(&self) -> Verdict {
        Verdict::from_bool(self.vs_base.better)
    }
}

/// SSIM between the probability maps of two independently trained segmenters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateBaseline {
    pub ssim: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn replicate_baseline(
    seg_a: &TrainedModel,
    seg_b: &TrainedModel,
    images: &[(String, Tensor)],
    ssim_cfg: &SsimConfig,
) -> Result<ReplicateBaseline> {
    let (h, w) = (seg_a.side, seg_a.side);
    let ssim: Vec<f64> = images
        .iter()
        .map(|(_, x)| ssim(&seg_a.probability_map(x)?, &seg_b.probability_map(x)?, h, w, ssim_cfg))
        .collect::<Result<_>>()?;
    let (mean, std) = mean_std(&ssim);
    Ok(ReplicateBaseline { ssim, mean, std })
}

/// Compares every method present in both map sets, image by image.
pub fn consistency_from_maps(
    kind: ConsistencyKind,
    a: &MapSet,
    b: &MapSet,
    baseline: &ReplicateBaseline,
    ssim_cfg: &SsimConfig,
    cfg: &HarnessConfig,
) -> Result<Vec<ConsistencyResult>> {
    if a.image_ids != b.image_ids {
        return Err(Error::invalid("map sets cover different images"));
    }
    if baseline.ssim.len() != a.image_ids.len() {
        return Err(Error::invalid(format!(
            "baseline has {} images, maps have {}",
            baseline.ssim.len(),
            a.image_ids.len()
        )));
    }
    a.methods()
        .into_iter()
        .map(|method| {
            let (ma, mb) = (a.method(method)?, b.method(method)?);
            let ssim: Vec<f64> = ma
                .iter()
                .zip(mb)
                .map(|(x, y)| ssim(x, y, a.height, a.width, ssim_cfg))
                .collect::<Result<_>>()?;
            let (mean, std) = mean_std(&ssim);
            let vs_base = paired_bootstrap(
                &differences(&ssim, &baseline.ssim)?,
                cfg.bootstrap_resamples,
                cfg.stream(&format!("{kind}/{method}/base")),
            )?;
            Ok(ConsistencyResult {
                kind,
                method,
                ssim,
                mean,
                std,
                low: cfg.low_ssim,
                vs_base,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run(
    kind: ConsistencyKind,
    a: &TrainedModel,
    b: &TrainedModel,
    methods: &[Method],
    images: &[(String, Tensor)],
    baseline: &ReplicateBaseline,
    saliency: &SaliencyConfig,
    ssim_cfg: &SsimConfig,
    cfg: &HarnessConfig,
) -> Result<Vec<ConsistencyResult>> {
    let ma = compute_map_set(&a.network, &a.weights, images, methods, saliency)?;
    let mb = compute_map_set(&b.network, &b.weights, images, methods, saliency)?;
    consistency_from_maps(kind, &ma, &mb, baseline, ssim_cfg, cfg)
}

/// Two models of the same architecture.
#[allow(clippy::too_many_arguments)]
pub fn repeatability_test(
    a: &TrainedModel,
    b: &TrainedModel,
    methods: &[Method],
    images: &[(String, Tensor)],
    baseline: &ReplicateBaseline,
    saliency: &SaliencyConfig,
    ssim_cfg: &SsimConfig,
    cfg: &HarnessConfig,
) -> Result<Vec<ConsistencyResult>> {
    if a.arch != b.arch {
        return Err(Error::invalid(format!(
            "repeatability compares one architecture, got {} and {}",
            a.arch, b.arch
        )));
    }
    run(ConsistencyKind::Repeatability, a, b, methods, images, baseline, saliency, ssim_cfg, cfg)
}

/// Two models of different architectures.
#[allow(clippy::too_many_arguments)]
pub fn reproducibility_test(
    a: &TrainedModel,
    b: &TrainedModel,
    methods: &[Method],
    images: &[(String, Tensor)],
    baseline: &ReplicateBaseline,
    saliency: &SaliencyConfig,
    ssim_cfg: &SsimConfig,
    cfg: &HarnessConfig,
) -> Result<Vec<ConsistencyResult>> {
    if a.arch == b.arch {
        return Err(Error::invalid(format!("reproducibility needs two architectures, both are {}", a.arch)));
    }
    run(ConsistencyKind::Reproducibility, a, b, methods, images, baseline, saliency, ssim_cfg, cfg)
}
