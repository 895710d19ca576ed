//! Classifier and segmenter architectures, training, and persistence.

mod arch;
mod auc;
mod sampler;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arch::ArchId;
pub use auc::roc_auc;
pub use sampler::BalancedSampler;
pub use train::{train_classifier, train_segmenter, ClassifierTraining, SegmenterTraining};

use crate::engine::{sigmoid, Network, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Quantity watched for early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Validation ROC-AUC, higher is better.
    ValAuc,
    /// Mean validation loss, lower is better.
    ValLoss,
}

impl Monitor {
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Monitor::ValAuc => candidate > best,
            Monitor::ValLoss => candidate < best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub monitor: Monitor,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Last epoch trained.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
}

impl TrainingHistory {
    pub fn best_metric(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_metric
    }

    /// Checks that `best_epoch` is the first optimum of the monitored metric and
    /// that stopping happened exactly when the patience ran out.
    pub fn is_consistent(&self, patience: usize, max_epochs: usize) -> bool {
        if self.epochs.is_empty() || self.stopped_epoch != self.epochs.len() {
            return false;
        }
        let mut best = 0;
        for (i, e) in self.epochs.iter().enumerate() {
            if i == 0 || self.monitor.improves(e.val_metric, self.epochs[best].val_metric) {
                best = i;
            }
            let stale = i - best;
            let last = i + 1 == self.epochs.len();
            if stale >= patience && !last {
                return false;
            }
            if last {
                let stopped_early = stale >= patience;
                if stopped_early != self.early_stopped || (!stopped_early && i + 1 != max_epochs) {
                    return false;
                }
            }
        }
        best + 1 == self.best_epoch
    }
}

/// A trained network together with how it was obtained.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub arch: ArchId,
    pub side: usize,
    pub seed: u64,
    pub network: Network,
    pub weights: WeightStore,
    pub history: TrainingHistory,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    arch: ArchId,
    side: usize,
    seed: u64,
    fingerprint: String,
    history: TrainingHistory,
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.side == other.side
            && self.seed == other.seed
            && self.history == other.history
            && self.weights.to_salw_bytes() == other.weights.to_salw_bytes()
    }
}

impl TrainedModel {
    /// Wraps existing weights (e.g. zero or randomized) as a model with an empty history.
    pub fn from_weights(arch: ArchId, side: usize, weights: WeightStore) -> Result<Self> {
        let network = arch.build(side)?;
        network.check_weights(&weights)?;
        Ok(Self {
            arch,
            side,
            seed: 0,
            network,
            weights,
            history: TrainingHistory {
                monitor: if arch.is_classifier() { Monitor::ValAuc } else { Monitor::ValLoss },
                epochs: Vec::new(),
                best_epoch: 0,
                stopped_epoch: 0,
                early_stopped: false,
            },
        })
    }

    pub fn with_weights(&self, weights: WeightStore) -> Result<Self> {
        self.network.check_weights(&weights)?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.weights.fingerprint()
    }

    pub fn logit(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.network.forward(&self.weights, image)?.0)
    }

    /// Per-pixel probability map of a segmenter.
    pub fn probability_map(&self, image: &Tensor) -> Result<Vec<f32>> {
        if self.arch.is_classifier() {
            return Err(Error::invalid(format!("{} is not a segmenter", self.arch)));
        }
        Ok(self.logit(image)?.data().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Image-level score in `[0, 1]`: the classifier probability, or the
    /// segmenter output reduced with [`segmentation_score`].
    pub fn score(&self, image: &Tensor) -> Result<f64> {
        if self.arch.is_classifier() {
            classify(self, image)
        } else {
            Ok(segmentation_score(&self.probability_map(image)?))
        }
    }

    /// Writes `<stem>.salw` and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.salw")), self.weights.to_salw_bytes())?;
        let sidecar = Sidecar {
            arch: self.arch,
            side: self.side,
            seed: self.seed,
            fingerprint: format!("{:016x}", self.fingerprint()),
            history: self.history.clone(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let salw_path = dir.join(format!("{stem}.salw"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::data(&json_path, e.to_string()))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::data(&json_path, e.to_string()))?;
        let bytes = fs::read(&salw_path).map_err(|e| Error::data(&salw_path, e.to_string()))?;
        let weights = WeightStore::from_salw_bytes(&bytes).map_err(|e| Error::data(&salw_path, e.to_string()))?;
        let fp = format!("{:016x}", weights.fingerprint());
        if fp != sidecar.fingerprint {
            return Err(Error::data(
                &salw_path,
                format!("weights fingerprint {fp} does not match sidecar {}", sidecar.fingerprint),
            ));
        }
        let network = sidecar.arch.build(sidecar.side)?;
        network.check_weights(&weights)?;
        Ok(Self {
            arch: sidecar.arch,
            side: sidecar.side,
            seed: sidecar.seed,
            network,
            weights,
            history: sidecar.history,
        })
    }
}

/// Classifier probability `sigmoid(logit)`.
pub fn classify(model: &TrainedModel, image: &Tensor) -> Result<f64> {
    if !model.arch.is_classifier() {
        return Err(Error::invalid(format!("{} is not a classifier", model.arch)));
    }
    Ok(sigmoid(model.logit(image)?.data()[0]) as f64)
}

/// Image score of a segmenter: the probability map is quantized to 8 bits and
/// the mean of its nonzero cells is returned (rescaled to `[0, 1]`), or 0 when
/// every cell quantizes to zero.
pub fn segmentation_score(probs: &[f32]) -> f64 {
    let mut sum = 0u64;
    let mut count = 0u64;
    for &p in probs {
        let q = (p.clamp(0.0, 1.0) * 255.0).round() as u64;
        if q > 0 {
            sum += q;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum as f64 / count as f64 / 255.0
    }
}
