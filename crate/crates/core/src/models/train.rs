use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{roc_auc, ArchId, BalancedSampler, EpochRecord, Monitor, TrainedModel, TrainingHistory};
use crate::data::{Dataset, Sample, Split};
use crate::engine::{adam_step, bce_logit_grad, bce_loss, sigmoid, AdamState, FocalDice, Network, WeightStore};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTraining {
    pub lr: f32,
    pub max_epochs: usize,
    /// Epochs without a validation-AUC improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            max_epochs: 20,
            patience: 4,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterTraining {
    pub lr: f32,
    pub max_epochs: usize,
    /// Epochs without a validation-loss decrease before stopping.
    pub stop_patience: usize,
    /// Epochs without a decrease before the learning rate is multiplied by `decay_factor`.
    pub decay_patience: usize,
    pub decay_factor: f32,
    pub batch_size: usize,
    /// Balanced draws per epoch; 0 means the size of the training split.
    pub samples_per_epoch: usize,
    pub loss: FocalDice,
}

impl Default for SegmenterTraining {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            max_epochs: 75,
            stop_patience: 15,
            decay_patience: 3,
            decay_factor: 0.1,
            batch_size: 4,
            samples_per_epoch: 0,
            loss: FocalDice::default(),
        }
    }
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn check_lr(lr: f32) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {lr} must be positive")));
    }
    Ok(())
}

fn labels_of(samples: &[&Sample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

fn require_both_classes(split: Split, samples: &[&Sample]) -> Result<()> {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    if pos == 0 || pos == samples.len() {
        return Err(Error::precondition(format!(
            "{} split needs both classes (has {pos} positive of {})",
            split.name(),
            samples.len()
        )));
    }
    Ok(())
}

fn check_side(dataset: &Dataset) -> Result<usize> {
    let (h, w) = (dataset.manifest.height, dataset.manifest.width);
    if h != w {
        return Err(Error::invalid(format!("models need square images, dataset is {h}x{w}")));
    }
    Ok(h)
}

/// Tracks the best epoch and the epochs since it.
struct Stopper {
    monitor: Monitor,
    best: Option<(usize, f64, WeightStore)>,
    stale: usize,
}

impl Stopper {
    fn new(monitor: Monitor) -> Self {
        Self {
            monitor,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch; returns whether it improved on the best so far.
    fn observe(&mut self, epoch: usize, metric: f64, weights: &WeightStore) -> bool {
        let improved = match &self.best {
            None => true,
            Some((_, best, _)) => self.monitor.improves(metric, *best),
        };
        if improved {
            self.best = Some((epoch, metric, weights.clone()));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }
}

/// Mini-batch Adam on BCE-with-logits, early stopping on validation ROC-AUC,
/// and restoration of the best epoch's weights.
pub fn train_classifier(dataset: &Dataset, arch: ArchId, train_seed: u64, cfg: &ClassifierTraining) -> Result<TrainedModel> {
    if !arch.is_classifier() {
        return Err(Error::invalid(format!("{arch} is not a classifier architecture")));
    }
    check_lr(cfg.lr)?;
    check_positive("max_epochs", cfg.max_epochs)?;
    check_positive("patience", cfg.patience)?;
    check_positive("batch_size", cfg.batch_size)?;
    let side = check_side(dataset)?;
    let train = dataset.split(Split::Train);
    let val = dataset.split(Split::Val);
    require_both_classes(Split::Train, &train)?;
    require_both_classes(Split::Val, &val)?;

    let net = arch.build(side)?;
    let mut weights = net.init_weights(seed::derive(train_seed, 0));
    let mut adam = AdamState::new(&weights);
    let train_x: Vec<Tensor> = train.iter().map(|s| s.tensor()).collect();
    let val_x: Vec<Tensor> = val.iter().map(|s| s.tensor()).collect();
    let val_y = labels_of(&val);

    let mut stopper = Stopper::new(Monitor::ValAuc);
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(train_seed, epoch as u64));
        shuffle(&mut order, &mut rng);
        let mut probs = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<WeightStore> = None;
            for &i in batch {
                let (logit, tape) = net.forward(&weights, &train_x[i])?;
                let z = logit.data()[0];
                let y = train[i].label;
                probs.push(sigmoid(z) as f64);
                labels.push(y);
                let g = net.backward_weights(&tape, &weights, &Tensor::scalar(bce_logit_grad(z, y)))?;
                accumulate(&mut grads, g);
            }
            let mut grads = grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut weights, &grads, &mut adam, cfg.lr)?;
        }
        let train_loss = bce_loss(&probs, &labels)?;
        let val_scores = val_x
            .iter()
            .map(|x| Ok(sigmoid(net.forward(&weights, x)?.0.data()[0]) as f64))
            .collect::<Result<Vec<f64>>>()?;
        let val_auc = roc_auc(&val_scores, &val_y)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: val_auc,
            lr: cfg.lr,
        });
        stopper.observe(epoch, val_auc, &weights);
        if stopper.stale >= cfg.patience {
            break;
        }
    }
    finish(arch, side, train_seed, net, stopper, epochs, cfg.patience)
}

fn finish(
    arch: ArchId,
    side: usize,
    train_seed: u64,
    network: Network,
    stopper: Stopper,
    epochs: Vec<EpochRecord>,
    patience: usize,
) -> Result<TrainedModel> {
    let (best_epoch, _, weights) = stopper.best.expect("at least one epoch");
    Ok(TrainedModel {
        arch,
        side,
        seed: train_seed,
        network,
        weights,
        history: TrainingHistory {
            monitor: stopper.monitor,
            stopped_epoch: epochs.len(),
            early_stopped: stopper.stale >= patience,
            best_epoch,
            epochs,
        },
    })
}

fn accumulate(acc: &mut Option<WeightStore>, g: WeightStore) {
    match acc {
        Some(a) => a.add_scaled(&g, 1.0),
        None => *acc = Some(g),
    }
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Encoder-decoder trained on per-pixel truth with the focal/Dice mix,
/// balanced class sampling, learning-rate decay on plateau, and early
/// stopping on validation loss.
pub fn train_segmenter(dataset: &Dataset, train_seed: u64, cfg: &SegmenterTraining) -> Result<TrainedModel> {
    check_lr(cfg.lr)?;
    check_positive("max_epochs", cfg.max_epochs)?;
    check_positive("stop_patience", cfg.stop_patience)?;
    check_positive("decay_patience", cfg.decay_patience)?;
    check_positive("batch_size", cfg.batch_size)?;
    if !(cfg.decay_factor > 0.0 && cfg.decay_factor <= 1.0) {
        return Err(Error::invalid("decay_factor must lie in (0, 1]"));
    }
    let side = check_side(dataset)?;
    let flavor = dataset.flavor();
    let train = dataset.split(Split::Train);
    let val = dataset.split(Split::Val);
    if val.is_empty() {
        return Err(Error::precondition("segmenter training needs a validation split"));
    }
    for s in train.iter().chain(&val) {
        if s.label == 1 && s.truth(flavor).iter().all(|&m| m == 0) {
            return Err(Error::precondition(format!("positive sample {} has an empty mask", s.id)));
        }
    }
    let mut sampler = BalancedSampler::new(&labels_of(&train), seed::derive(train_seed, 1))?;

    let net = ArchId::Seg.build(side)?;
    let mut weights = net.init_weights(seed::derive(train_seed, 0));
    let mut adam = AdamState::new(&weights);
    let target = |s: &Sample| -> Vec<f32> { s.truth(flavor).iter().map(|&m| m as f32).collect() };
    let train_x: Vec<Tensor> = train.iter().map(|s| s.tensor()).collect();
    let train_t: Vec<Vec<f32>> = train.iter().map(|s| target(s)).collect();
    let val_x: Vec<Tensor> = val.iter().map(|s| s.tensor()).collect();
    let val_t: Vec<Vec<f32>> = val.iter().map(|s| target(s)).collect();
    let per_epoch = if cfg.samples_per_epoch == 0 {
        train.len()
    } else {
        cfg.samples_per_epoch
    };

    let mut lr = cfg.lr;
    let mut plateau = 0;
    let mut stopper = Stopper::new(Monitor::ValLoss);
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let draws: Vec<usize> = (0..per_epoch).map(|_| sampler.next_index()).collect();
        let mut total = 0.0;
        for batch in draws.chunks(cfg.batch_size) {
            let mut grads: Option<WeightStore> = None;
            for &i in batch {
                let (logits, tape) = net.forward(&weights, &train_x[i])?;
                let (loss, g) = cfg.loss.loss_and_grad(logits.data(), &train_t[i]);
                total += loss;
                let upstream = Tensor::new(logits.shape().to_vec(), g)?;
                accumulate(&mut grads, net.backward_weights(&tape, &weights, &upstream)?);
            }
            let mut grads = grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut weights, &grads, &mut adam, lr)?;
        }
        let mut val_loss = 0.0;
        for (x, t) in val_x.iter().zip(&val_t) {
            let (logits, _) = net.forward(&weights, x)?;
            val_loss += cfg.loss.loss_and_grad(logits.data(), t).0;
        }
        val_loss /= val_x.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / per_epoch as f64,
            val_metric: val_loss,
            lr,
        });
        if stopper.observe(epoch, val_loss, &weights) {
            plateau = 0;
        } else {
            plateau += 1;
            if plateau >= cfg.decay_patience {
                lr *= cfg.decay_factor;
                plateau = 0;
            }
        }
        if stopper.stale >= cfg.stop_patience {
            break;
        }
    }
    finish(ArchId::Seg, side, train_seed, net, stopper, epochs, cfg.stop_patience)
}
