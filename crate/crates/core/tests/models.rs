mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saltrust::data::{generate, Dataset, Flavor, GeneratorParams, Split};
use saltrust::models::{
    classify, roc_auc, segmentation_score, train_classifier, train_segmenter, ArchId, ClassifierTraining,
    SegmenterTraining, TrainedModel,
};
use saltrust::Tensor;
use support::oracles::{brute_auc, inside_outside_contrast};

fn dataset(n: usize, side: usize, seed: u64) -> Dataset {
    generate(&GeneratorParams::new(n, Flavor::Segmentation, side), seed).unwrap()
}

fn test_auc(model: &TrainedModel, d: &Dataset) -> f64 {
    let test = d.split(Split::Test);
    let scores: Vec<f64> = test.iter().map(|s| model.score(&s.tensor()).unwrap()).collect();
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    roc_auc(&scores, &labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roc_auc_matches_pairwise_count(
        pairs in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 5.0).collect();
        let mut labels: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let fast = roc_auc(&scores, &labels).unwrap();
        prop_assert!((fast - brute_auc(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn separable_data_is_learned() {
    let d = dataset(1000, 32, 17);
    let test = d.split(Split::Test);
    let oracle: Vec<f64> = test.iter().map(|s| inside_outside_contrast(&s.image, 32, 0.08 * 32.0)).collect();
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    assert!(brute_auc(&oracle, &labels) >= 0.95, "oracle must separate the data first");

    let cfg = ClassifierTraining {
        max_epochs: 10,
        lr: 3e-4,
        ..Default::default()
    };
    let model = train_classifier(&d, ArchId::ArchA, 5, &cfg).unwrap();
    assert!(model.history.is_consistent(cfg.patience, cfg.max_epochs));
    let auc = test_auc(&model, &d);
    assert!(auc >= 0.95, "test ROC-AUC {auc}");
}

#[test]
fn shuffled_labels_stay_near_chance_and_stop_early() {
    let mut d = dataset(4000, 16, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut labels: Vec<u8> = d.samples.iter().map(|s| s.label).collect();
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    for (s, &y) in d.samples.iter_mut().zip(&labels) {
        s.label = y;
    }
    let cfg = ClassifierTraining {
        max_epochs: 20,
        ..Default::default()
    };
    let model = train_classifier(&d, ArchId::ArchB, 3, &cfg).unwrap();
    for e in &model.history.epochs {
        assert!((0.4..=0.6).contains(&e.val_metric), "epoch {}: val AUC {}", e.epoch, e.val_metric);
    }
    assert!(model.history.early_stopped);
    assert!(model.history.stopped_epoch < cfg.max_epochs);
    assert!(model.history.is_consistent(cfg.patience, cfg.max_epochs));
}

#[test]
fn training_is_deterministic() {
    let d = dataset(300, 16, 2);
    let cfg = ClassifierTraining {
        max_epochs: 2,
        ..Default::default()
    };
    let a = train_classifier(&d, ArchId::ArchB, 8, &cfg).unwrap();
    let b = train_classifier(&d, ArchId::ArchB, 8, &cfg).unwrap();
    assert_eq!(a, b);
    let c = train_classifier(&d, ArchId::ArchB, 9, &cfg).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn single_class_training_data_is_rejected() {
    let mut d = dataset(200, 16, 2);
    let train: Vec<String> = d.manifest.splits[&Split::Train].clone();
    for s in d.samples.iter_mut().filter(|s| train.contains(&s.id)) {
        s.label = 0;
    }
    assert!(train_classifier(&d, ArchId::ArchA, 1, &ClassifierTraining::default()).is_err());
    assert!(train_segmenter(&d, 1, &SegmenterTraining::default()).is_err());
    assert!(train_classifier(&d, ArchId::Seg, 1, &ClassifierTraining::default()).is_err());
}

#[test]
fn segmenter_outputs_probabilities_and_round_trips() {
    let d = dataset(200, 16, 6);
    let cfg = SegmenterTraining {
        max_epochs: 2,
        lr: 1e-3,
        ..Default::default()
    };
    let model = train_segmenter(&d, 4, &cfg).unwrap();
    assert!(model.history.is_consistent(cfg.stop_patience, cfg.max_epochs));
    for s in d.split(Split::Test) {
        let p = model.probability_map(&s.tensor()).unwrap();
        assert_eq!(p.len(), 16 * 16);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let score = model.score(&s.tensor()).unwrap();
        assert!((0.0..=1.0).contains(&score));
        assert_eq!(score, segmentation_score(&p));
    }
    assert!(classify(&model, &d.samples[0].tensor()).is_err());

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), "seg").unwrap();
    let back = TrainedModel::load(dir.path(), "seg").unwrap();
    assert_eq!(back, model);
}

#[test]
fn segmenter_decays_learning_rate_on_plateau() {
    let d = dataset(200, 16, 6);
    let cfg = SegmenterTraining {
        max_epochs: 12,
        lr: 1e-2,
        samples_per_epoch: 16,
        stop_patience: 4,
        decay_patience: 1,
        ..Default::default()
    };
    let model = train_segmenter(&d, 4, &cfg).unwrap();
    let h = &model.history;
    assert!(h.is_consistent(cfg.stop_patience, cfg.max_epochs));
    // Every epoch after a non-improving one trains at a lower rate.
    let mut best = f64::INFINITY;
    for w in h.epochs.windows(2) {
        best = best.min(w[0].val_metric);
        if w[0].val_metric > best {
            assert!(w[1].lr < w[0].lr, "{:?}", h.epochs);
        }
    }
    assert!(h.epochs.last().unwrap().lr < cfg.lr, "no decay happened: {:?}", h.epochs);
}

#[test]
fn classifier_probability_is_monotone_in_logit() {
    let net = ArchId::ArchB.build(16).unwrap();
    let mut weights = net.zero_weights();
    let img = Tensor::filled(&[1, 16, 16], 0.5);
    let mut last = 0.0;
    for b in [-3.0f32, -1.0, 0.0, 0.5, 2.0] {
        weights.get_mut("logits").unwrap().bias.data_mut()[0] = b;
        let model = TrainedModel::from_weights(ArchId::ArchB, 16, weights.clone()).unwrap();
        let p = classify(&model, &img).unwrap();
        assert!(p > last);
        assert_eq!(p, classify(&model, &img).unwrap());
        last = p;
    }
}
