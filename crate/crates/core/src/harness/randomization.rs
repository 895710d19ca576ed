use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_map_set, mean_std, HarnessConfig, MapSet, Verdict};
use crate::data::Sample;
use crate::engine::{init_truncated_normal, Network, WeightStore};
use crate::error::{Error, Result};
use crate::metrics::{ssim, SsimConfig};
use crate::models::{roc_auc, ArchId, TrainedModel};
use crate::saliency::{Method, SaliencyConfig};
use crate::seed;
use crate::tensor::Tensor;

/// Mean SSIM between original maps and maps after randomizing the top
/// `depth` blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub depth: usize,
    /// Block randomized at this step; `None` for the untouched model.
    pub block: Option<String>,
    pub mean_ssim: f64,
    pub std_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationTrace {
    pub method: Method,
    pub points: Vec<TracePoint>,
    /// Mean SSIM over random pairs of original maps.
    pub threshold: f64,
    pub verdict: Verdict,
}

impl RandomizationTrace {
    /// PASS when the fully randomized maps fall below the threshold.
    pub fn decide(points: &[TracePoint], threshold: f64) -> Verdict {
        Verdict::from_bool(points.last().is_some_and(|p| p.mean_ssim < threshold))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationOutcome {
    pub arch: ArchId,
    pub model_fingerprint: String,
    /// Blocks in randomization order, output first.
    pub blocks: Vec<String>,
    pub sigma: f32,
    pub image_ids: Vec<String>,
    /// Index pairs into `image_ids` behind every threshold.
    pub pairs: Vec<(usize, usize)>,
    /// Classification ROC-AUC of the fully randomized model.
    pub randomized_roc_auc: f64,
    pub traces: Vec<RandomizationTrace>,
}

/// Fixed random subsample of test images: positives first (all of them when
/// fewer than `size`), topped up with negatives. Each group keeps dataset order.
pub fn select_sample(test: &[&Sample], size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |label: u8, want: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..test.len()).filter(|&i| test[i].label == label).collect();
        idx.shuffle(&mut rng);
        idx.truncate(want);
        idx.sort_unstable();
        idx
    };
    let positives = pick(1, size);
    let negatives = pick(0, size - positives.len());
    positives
        .into_iter()
        .chain(negatives)
        .map(|i| test[i].id.clone())
        .collect()
}

/// `count` distinct unordered pairs of indices below `n`, sampled without
/// replacement.
pub fn threshold_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < count + 1 {
        return Err(Error::precondition(format!(
            "degradation threshold needs at least {} maps for {count} pairs, got {n}",
            count + 1
        )));
    }
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = all.partial_shuffle(&mut rng, count);
    Ok(chosen.to_vec())
}

/// Replaces the weights and biases of every layer in `blocks` with truncated
/// normal draws. Each layer's draw depends only on `seed` and its name, so a
/// longer prefix of blocks keeps the draws of the shorter one.
pub fn randomize_blocks(
    net: &Network,
    weights: &WeightStore,
    blocks: &[String],
    sigma: f32,
    seed: u64,
) -> Result<WeightStore> {
    let all = net.blocks_top_down();
    let mut out = weights.clone();
    for block in blocks {
        let (_, layers) = all
            .iter()
            .find(|(b, _)| b == block)
            .ok_or_else(|| Error::invalid(format!("network has no block `{block}`")))?;
        for layer in layers {
            let layer_seed = seed::derive(seed, seed::hash_str(layer));
            let p = out.get_mut(layer).ok_or_else(|| Error::MissingWeights(layer.clone()))?;
            p.weight = init_truncated_normal(p.weight.shape(), seed::derive(layer_seed, 0), sigma)?;
            p.bias = init_truncated_normal(p.bias.shape(), seed::derive(layer_seed, 1), sigma)?;
        }
    }
    Ok(out)
}

fn ssim_stats(a: &[Vec<f32>], b: &[Vec<f32>], h: usize, w: usize, cfg: &SsimConfig) -> Result<(f64, f64)> {
    let values: Vec<f64> = a.iter().zip(b).map(|(x, y)| ssim(x, y, h, w, cfg)).collect::<Result<_>>()?;
    Ok(mean_std(&values))
}

/// Cascading randomization from the output block down. `original` holds the
/// trained model's maps for `images`; every depth, including zero, is
/// recomputed and compared against them. `scoring` feeds the ROC-AUC of the
/// fully randomized model.
#[allow(clippy::too_many_arguments)]
pub fn cascading_randomization(
    model: &TrainedModel,
    methods: &[Method],
    images: &[(String, Tensor)],
    original: &MapSet,
    scoring: &[(Tensor, u8)],
    saliency: &SaliencyConfig,
    ssim_cfg: &SsimConfig,
    cfg: &HarnessConfig,
) -> Result<RandomizationOutcome> {
    cfg.validate()?;
    let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    if original.image_ids != ids {
        return Err(Error::invalid("original maps cover different images than the sample"));
    }
    if original.model_fingerprint != model.fingerprint() {
        return Err(Error::invalid("original maps come from different weights"));
    }
    let pairs = threshold_pairs(images.len(), cfg.threshold_pairs, cfg.stream("randomization/pairs"))?;
    let (h, w) = (original.height, original.width);
    let thresholds: Vec<f64> = methods
        .iter()
        .map(|&m| {
            let maps = original.method(m)?;
            let values: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| ssim(&maps[i], &maps[j], h, w, ssim_cfg))
                .collect::<Result<_>>()?;
            Ok(mean_std(&values).0)
        })
        .collect::<Result<_>>()?;

    let blocks: Vec<String> = model.network.blocks_top_down().into_iter().map(|(b, _)| b).collect();
    let seed = cfg.stream("randomization/weights");
    let mut points: Vec<Vec<TracePoint>> = vec![Vec::new(); methods.len()];
    for depth in 0..=blocks.len() {
        let weights = randomize_blocks(&model.network, &model.weights, &blocks[..depth], cfg.randomization_sigma, seed)?;
        let maps = compute_map_set(&model.network, &weights, images, methods, saliency)?;
        for (k, &m) in methods.iter().enumerate() {
            let (mean_ssim, std_ssim) = ssim_stats(original.method(m)?, maps.method(m)?, h, w, ssim_cfg)?;
            points[k].push(TracePoint {
                depth,
                block: depth.checked_sub(1).map(|d| blocks[d].clone()),
                mean_ssim,
                std_ssim,
            });
        }
    }

    let full = randomize_blocks(&model.network, &model.weights, &blocks, cfg.randomization_sigma, seed)?;
    let randomized = model.with_weights(full)?;
    if !randomized.arch.is_classifier() {
        return Err(Error::invalid(format!("{} is not a classifier", randomized.arch)));
    }
    // Ranked by logit: same AUC as the probability without float32 sigmoid ties.
    let scores: Vec<f64> = scoring
        .iter()
        .map(|(x, _)| Ok(randomized.logit(x)?.data()[0] as f64))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = scoring.iter().map(|(_, y)| *y).collect();
    let randomized_roc_auc = roc_auc(&scores, &labels)?;

    let traces = methods
        .iter()
        .zip(points)
        .zip(thresholds)
        .map(|((&method, points), threshold)| RandomizationTrace {
            method,
            verdict: RandomizationTrace::decide(&points, threshold),
            points,
            threshold,
        })
        .collect();
    Ok(RandomizationOutcome {
        arch: model.arch,
        model_fingerprint: format!("{:016x}", model.fingerprint()),
        blocks,
        sigma: cfg.randomization_sigma,
        image_ids: ids,
        pairs,
        randomized_roc_auc,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_distinct_and_need_enough_maps() {
        let p = threshold_pairs(51, 50, 3).unwrap();
        let mut sorted = p.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        assert!(p.iter().all(|&(i, j)| i < j && j < 51));
        assert!(threshold_pairs(50, 50, 3).is_err());
        assert_eq!(p, threshold_pairs(51, 50, 3).unwrap());
    }
}
