use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use saltrust::data::{average_mask, export_dataset, generate, import_dataset, Dataset, Flavor, Sample, Split};
use saltrust::harness::{
    baseline_comparison, cascading_randomization, compute_map_set, consistency_from_maps, replicate_baseline,
    select_sample, utility_test, build_report, ConsistencyKind, DatasetSummary, MapSet, ModelSummary, ReportInputs,
    TrustReport, UtilitySection,
};
use saltrust::metrics::pr_curve;
use saltrust::models::{roc_auc, train_classifier, train_segmenter, ArchId, TrainedModel};
use saltrust::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::Failure;

pub const ARCH_A: &str = "arch_a";
pub const ARCH_A_REPLICATE: &str = "arch_a_replicate";
pub const ARCH_B: &str = "arch_b";
pub const SEGMENTER: &str = "segmenter";
pub const SEGMENTER_REPLICATE: &str = "segmenter_replicate";

const STAMP: &str = "stamp.json";

/// Written next to every stage's outputs.
#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    config_hash: String,
}

/// Trained models of one run.
pub struct Models {
    pub arch_a: TrainedModel,
    pub arch_a_replicate: TrainedModel,
    pub arch_b: TrainedModel,
    pub segmenter: TrainedModel,
    pub segmenter_replicate: TrainedModel,
}

impl Models {
    fn roles(&self) -> [(&'static str, &TrainedModel); 5] {
        [
            (ARCH_A, &self.arch_a),
            (ARCH_A_REPLICATE, &self.arch_a_replicate),
            (ARCH_B, &self.arch_b),
            (SEGMENTER, &self.segmenter),
            (SEGMENTER_REPLICATE, &self.segmenter_replicate),
        ]
    }
}

/// Maps of one run: ARCH_A on the positive test images plus the sample, the
/// other classifiers on the sample only.
pub struct RunMaps {
    pub primary: MapSet,
    pub replicate: MapSet,
    pub arch_b: MapSet,
}

/// One configured run rooted at an output directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
}

fn progress(msg: &str) {
    eprintln!("saltrust: {msg}");
}

fn images(dataset: &Dataset, ids: &[String]) -> Result<Vec<(String, Tensor)>, Failure> {
    ids.iter()
        .map(|id| {
            dataset
                .get(id)
                .map(|s| (id.clone(), s.tensor()))
                .ok_or_else(|| Failure::Validation(format!("dataset has no image {id}")))
        })
        .collect()
}

fn train_and_val(dataset: &Dataset) -> Vec<&Sample> {
    let mut samples = dataset.split(Split::Train);
    samples.extend(dataset.split(Split::Val));
    samples
}

/// Removes a stage's previous outputs, stamp included.
fn clear(dir: &Path) -> Result<(), Failure> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    Ok(())
}

fn base_label(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::Segmentation => "segmenter trained on pixel masks",
        Flavor::Detection => "segmenter trained on rasterized boxes",
    }
}

impl Run {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Result<Self, Failure> {
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, out })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn maps_dir(&self) -> PathBuf {
        self.out.join("maps")
    }

    pub fn pr_dir(&self) -> PathBuf {
        self.out.join("pr")
    }

    fn write_stamp(&self, dir: &Path, stage: &str) -> Result<(), Failure> {
        let stamp = Stamp {
            stage: stage.into(),
            config_hash: self.hash.clone(),
        };
        fs::create_dir_all(dir)?;
        fs::write(dir.join(STAMP), serde_json::to_string_pretty(&stamp).expect("stamp serializes") + "\n")?;
        Ok(())
    }

    /// Refuses outputs of a missing stage or of a different configuration.
    fn check_stamp(&self, dir: &Path, stage: &str) -> Result<(), Failure> {
        let path = dir.join(STAMP);
        let text = fs::read_to_string(&path).map_err(|_| {
            Failure::Validation(format!("{}: no {stage} outputs; run `{stage}` first", dir.display()))
        })?;
        let stamp: Stamp = serde_json::from_str(&text)
            .map_err(|e| Failure::Validation(format!("{}: unreadable stamp: {e}", path.display())))?;
        if stamp.stage != stage || stamp.config_hash != self.hash {
            return Err(Failure::Validation(format!(
                "{}: {} outputs were produced with config hash {}, current config hash is {}",
                dir.display(),
                stamp.stage,
                stamp.config_hash,
                self.hash
            )));
        }
        Ok(())
    }

    pub fn gen_data(&self) -> Result<Dataset, Failure> {
        let started = Instant::now();
        let dataset = match &self.cfg.dataset.import {
            Some(path) => {
                if !path.is_dir() {
                    return Err(Failure::Validation(format!(
                        "dataset.import: no dataset directory at {}",
                        path.display()
                    )));
                }
                import_dataset(path).map_err(|e| Failure::Validation(format!("dataset.import: {e}")))?
            }
            None => generate(&self.cfg.dataset.generator, self.cfg.seeds().dataset)
                .map_err(|e| Failure::Validation(format!("dataset.generator: {e}")))?,
        };
        let dir = self.data_dir();
        clear(&dir)?;
        export_dataset(&dataset, &dir)?;
        self.write_stamp(&dir, "gen-data")?;
        progress(&format!(
            "dataset of {} images written to {} ({:.1}s)",
            dataset.samples.len(),
            dir.display(),
            started.elapsed().as_secs_f64()
        ));
        Ok(dataset)
    }

    pub fn load_data(&self) -> Result<Dataset, Failure> {
        let dir = self.data_dir();
        self.check_stamp(&dir, "gen-data")?;
        Ok(import_dataset(&dir)?)
    }

    pub fn train(&self) -> Result<Models, Failure> {
        let dataset = self.load_data()?;
        let seeds = self.cfg.seeds();
        let m = &self.cfg.models;
        let dir = self.models_dir();
        clear(&dir)?;
        let timed = |role: &str, f: &dyn Fn() -> saltrust::Result<TrainedModel>| -> Result<TrainedModel, Failure> {
            let started = Instant::now();
            let model = f()?;
            model.save(&dir, role)?;
            progress(&format!(
                "trained {role} ({}), best epoch {} of {} ({:.1}s)",
                model.arch,
                model.history.best_epoch,
                model.history.stopped_epoch,
                started.elapsed().as_secs_f64()
            ));
            Ok(model)
        };
        let models = Models {
            arch_a: timed(ARCH_A, &|| train_classifier(&dataset, ArchId::ArchA, seeds.arch_a[0], &m.arch_a))?,
            arch_a_replicate: timed(ARCH_A_REPLICATE, &|| {
                train_classifier(&dataset, ArchId::ArchA, seeds.arch_a[1], &m.arch_a)
            })?,
            arch_b: timed(ARCH_B, &|| train_classifier(&dataset, ArchId::ArchB, seeds.arch_b, &m.arch_b))?,
            segmenter: timed(SEGMENTER, &|| train_segmenter(&dataset, seeds.segmenter[0], &m.segmenter))?,
            segmenter_replicate: timed(SEGMENTER_REPLICATE, &|| {
                train_segmenter(&dataset, seeds.segmenter[1], &m.segmenter)
            })?,
        };
        self.write_stamp(&dir, "train")?;
        Ok(models)
    }

    pub fn load_models(&self) -> Result<Models, Failure> {
        let dir = self.models_dir();
        self.check_stamp(&dir, "train")?;
        let load = |role: &str, arch: ArchId| -> Result<TrainedModel, Failure> {
            let model = TrainedModel::load(&dir, role)?;
            if model.arch != arch {
                return Err(Failure::Validation(format!("{}: {role} is {}, expected {arch}", dir.display(), model.arch)));
            }
            Ok(model)
        };
        Ok(Models {
            arch_a: load(ARCH_A, ArchId::ArchA)?,
            arch_a_replicate: load(ARCH_A_REPLICATE, ArchId::ArchA)?,
            arch_b: load(ARCH_B, ArchId::ArchB)?,
            segmenter: load(SEGMENTER, ArchId::Seg)?,
            segmenter_replicate: load(SEGMENTER_REPLICATE, ArchId::Seg)?,
        })
    }

    /// Ids of the positive test images and of the consistency sample.
    pub fn image_sets(&self, dataset: &Dataset) -> (Vec<String>, Vec<String>) {
        let test = dataset.split(Split::Test);
        let positives = test.iter().filter(|s| s.label == 1).map(|s| s.id.clone()).collect();
        let h = self.cfg.effective_harness();
        let sample = select_sample(&test, h.sample_size, h.stream("sample"));
        (positives, sample)
    }

    pub fn maps(&self) -> Result<RunMaps, Failure> {
        let dataset = self.load_data()?;
        let models = self.load_models()?;
        let (positives, sample) = self.image_sets(&dataset);
        let wanted: BTreeSet<&String> = positives.iter().chain(&sample).collect();
        let primary_ids: Vec<String> = dataset
            .split(Split::Test)
            .iter()
            .filter(|s| wanted.contains(&s.id))
            .map(|s| s.id.clone())
            .collect();
        let saliency = self.cfg.effective_saliency();
        let methods = &self.cfg.methods;
        let dir = self.maps_dir();
        clear(&dir)?;
        let compute = |role: &str, model: &TrainedModel, ids: &[String]| -> Result<MapSet, Failure> {
            let started = Instant::now();
            let set = compute_map_set(&model.network, &model.weights, &images(&dataset, ids)?, methods, &saliency)?;
            set.export(&dir.join(role))?;
            progress(&format!(
                "{} maps x {} images for {role} ({:.1}s)",
                methods.len(),
                ids.len(),
                started.elapsed().as_secs_f64()
            ));
            Ok(set)
        };
        let maps = RunMaps {
            primary: compute(ARCH_A, &models.arch_a, &primary_ids)?,
            replicate: compute(ARCH_A_REPLICATE, &models.arch_a_replicate, &sample)?,
            arch_b: compute(ARCH_B, &models.arch_b, &sample)?,
        };
        self.write_pr_curves(&dataset, &models, &maps.primary, &positives)?;
        self.write_stamp(&dir, "maps")?;
        Ok(maps)
    }

    /// One CSV per method and baseline with the PR curve of every positive
    /// test image.
    fn write_pr_curves(&self, dataset: &Dataset, models: &Models, primary: &MapSet, positives: &[String]) -> Result<(), Failure> {
        let flavor = dataset.flavor();
        let truths: Vec<Vec<u8>> = positives
            .iter()
            .map(|id| dataset.get(id).expect("test image").truth(flavor))
            .collect();
        let avg = average_mask(&train_and_val(dataset), flavor)?;
        let seg: Vec<Vec<f32>> = images(dataset, positives)?
            .iter()
            .map(|(_, x)| models.segmenter.probability_map(x))
            .collect::<saltrust::Result<_>>()?;
        let on_positives = primary.subset(positives)?;
        let mut tables: Vec<(String, Vec<&[f32]>)> = on_positives
            .maps
            .iter()
            .map(|(m, maps)| (m.to_string(), maps.iter().map(Vec::as_slice).collect()))
            .collect();
        tables.push(("AVG".into(), vec![avg.as_slice(); positives.len()]));
        tables.push(("BASE".into(), seg.iter().map(Vec::as_slice).collect()));

        let dir = self.pr_dir();
        clear(&dir)?;
        fs::create_dir_all(&dir)?;
        for (name, maps) in tables {
            let mut csv = format!("# config_hash={}\nimage_id,threshold,precision,recall\n", self.hash);
            for ((id, map), truth) in positives.iter().zip(maps).zip(&truths) {
                let scores: Vec<f64> = map.iter().map(|&v| v as f64).collect();
                for p in pr_curve(&scores, truth)?.points {
                    let _ = writeln!(csv, "{id},{},{},{}", p.threshold, p.precision, p.recall);
                }
            }
            fs::write(dir.join(format!("{name}.csv")), csv)?;
        }
        Ok(())
    }

    pub fn load_maps(&self, models: &Models) -> Result<RunMaps, Failure> {
        let dir = self.maps_dir();
        self.check_stamp(&dir, "maps")?;
        let load = |role: &str, model: &TrainedModel| -> Result<MapSet, Failure> {
            let set = MapSet::import(&dir.join(role))?;
            if set.model_fingerprint != model.fingerprint() {
                return Err(Failure::Validation(format!(
                    "{}: maps come from weights {:016x}, {role} has {:016x}",
                    dir.join(role).display(),
                    set.model_fingerprint,
                    model.fingerprint()
                )));
            }
            let have: BTreeSet<_> = set.methods().into_iter().collect();
            if let Some(m) = self.cfg.methods.iter().find(|m| !have.contains(m)) {
                return Err(Failure::Validation(format!("{}: no {m} maps", dir.join(role).display())));
            }
            Ok(set)
        };
        Ok(RunMaps {
            primary: load(ARCH_A, &models.arch_a)?,
            replicate: load(ARCH_A_REPLICATE, &models.arch_a_replicate)?,
            arch_b: load(ARCH_B, &models.arch_b)?,
        })
    }

    fn model_summaries(&self, models: &Models, test: &[&Sample]) -> Result<Vec<ModelSummary>, Failure> {
        let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
        models
            .roles()
            .into_iter()
            .map(|(role, model)| {
                let scores: Vec<f64> = test
                    .iter()
                    .map(|s| {
                        let x = s.tensor();
                        // Classifiers rank by logit, which avoids float32 sigmoid ties.
                        if model.arch.is_classifier() {
                            Ok(model.logit(&x)?.data()[0] as f64)
                        } else {
                            model.score(&x)
                        }
                    })
                    .collect::<saltrust::Result<_>>()?;
                let h = &model.history;
                Ok(ModelSummary {
                    role: role.into(),
                    arch: model.arch,
                    seed: model.seed,
                    fingerprint: format!("{:016x}", model.fingerprint()),
                    test_roc_auc: roc_auc(&scores, &labels)?,
                    best_epoch: h.best_epoch,
                    stopped_epoch: h.stopped_epoch,
                    early_stopped: h.early_stopped,
                })
            })
            .collect()
    }

    /// Runs the four tests on stored outputs and writes the report files.
    pub fn report(&self) -> Result<TrustReport, Failure> {
        let started = Instant::now();
        let dataset = self.load_data()?;
        let models = self.load_models()?;
        let maps = self.load_maps(&models)?;
        let (positives, sample) = self.image_sets(&dataset);
        let harness = self.cfg.effective_harness();
        let saliency = self.cfg.effective_saliency();
        let ssim_cfg = &self.cfg.ssim;
        let methods = &self.cfg.methods;
        let flavor = dataset.flavor();
        let test = dataset.split(Split::Test);

        let truths: Vec<Vec<u8>> = positives
            .iter()
            .map(|id| dataset.get(id).expect("test image").truth(flavor))
            .collect();
        let avg = average_mask(&train_and_val(&dataset), flavor)?;
        let seg_maps: Vec<Vec<f32>> = images(&dataset, &positives)?
            .iter()
            .map(|(_, x)| models.segmenter.probability_map(x))
            .collect::<saltrust::Result<_>>()?;
        let on_positives = maps.primary.subset(&positives)?;
        let utility_results = methods
            .iter()
            .map(|&m| utility_test(m, on_positives.method(m)?, &truths, &avg, &seg_maps, &harness))
            .collect::<saltrust::Result<Vec<_>>>()?;
        let utility = UtilitySection {
            base_label: base_label(flavor).into(),
            image_ids: positives.clone(),
            baselines: baseline_comparison(&truths, &avg, &seg_maps, &harness)?,
            methods: utility_results,
        };
        progress("utility test done");

        let sample_images = images(&dataset, &sample)?;
        let on_sample = maps.primary.subset(&sample)?;
        let scoring: Vec<(Tensor, u8)> = test.iter().map(|s| (s.tensor(), s.label)).collect();
        let randomization = cascading_randomization(
            &models.arch_a,
            methods,
            &sample_images,
            &on_sample,
            &scoring,
            &saliency,
            ssim_cfg,
            &harness,
        )?;
        progress("cascading randomization done");

        let segmenter_replicate = replicate_baseline(&models.segmenter, &models.segmenter_replicate, &sample_images, ssim_cfg)?;
        let consistency = |kind, other: &MapSet| -> Result<_, Failure> {
            if other.image_ids != sample {
                return Err(Failure::Validation(format!("{kind} maps cover different images than the sample")));
            }
            Ok(consistency_from_maps(kind, &on_sample, other, &segmenter_replicate, ssim_cfg, &harness)?)
        };
        let repeatability = consistency(ConsistencyKind::Repeatability, &maps.replicate)?;
        let reproducibility = consistency(ConsistencyKind::Reproducibility, &maps.arch_b)?;
        progress("consistency tests done");

        let m = &dataset.manifest;
        let report = build_report(ReportInputs {
            config_hash: self.hash.clone(),
            config: serde_json::from_str(&self.cfg.canonical_json()).expect("canonical json parses"),
            decisions: decisions(&self.cfg),
            methods: methods.clone(),
            dataset: DatasetSummary {
                flavor,
                samples: dataset.samples.len(),
                height: m.height,
                width: m.width,
                seed: m.seed,
                counts: m.counts.clone(),
            },
            models: self.model_summaries(&models, &test)?,
            utility,
            randomization,
            consistency_image_ids: sample,
            segmenter_replicate,
            repeatability,
            reproducibility,
        })?;
        report.verify()?;
        report.write(&self.out)?;
        progress(&format!(
            "report written to {} ({:.1}s)",
            self.out.join("report.json").display(),
            started.elapsed().as_secs_f64()
        ));
        Ok(report)
    }

    /// Every stage in order, each reading the previous one's outputs from disk.
    pub fn audit(&self) -> Result<TrustReport, Failure> {
        self.gen_data()?;
        self.train()?;
        self.maps()?;
        self.report()
    }
}

/// Design decisions echoed in the report header.
pub fn decisions(cfg: &ExperimentConfig) -> Vec<String> {
    let s = &cfg.saliency;
    let q = &cfg.ssim;
    let h = &cfg.harness;
    vec![
        "saliency maps explain the pre-sigmoid logit and keep their sign".into(),
        format!("IG: all-zero baseline, right Riemann sum with {} steps", s.ig_steps),
        format!(
            "SG and SIG: {} Gaussian samples, sigma {} of the image value range, noise seeded per image",
            s.sg_samples, s.sg_noise_sigma
        ),
        format!(
            "GCAM: {} after its ReLU, bilinear upsampling; GGCAM = GBP x GCAM",
            s.gradcam_layer.as_deref().unwrap_or("last conv layer")
        ),
        format!("XRAI: intensity Ward merge into {} regions ranked by mean IG attribution", s.xrai_segments),
        "AUPRC: average precision (step integration), at most 512 quantile thresholds".into(),
        format!(
            "SSIM: per-map min-max normalization (constant maps -> 0.5), {}x{} Gaussian window sigma {}, K1 {}, K2 {}, mean over valid windows",
            q.window_size, q.window_size, q.sigma, q.k1, q.k2
        ),
        format!(
            "better than a baseline: 95% percentile interval of {} paired bootstrap resamples lies above 0",
            h.bootstrap_resamples
        ),
        "AVG baseline: pixelwise mean ground truth of the positive training and validation images".into(),
        format!(
            "randomization: cumulative from the output block, weights and biases re-drawn from a truncated normal (sigma {})",
            h.randomization_sigma
        ),
        format!(
            "degradation threshold: mean SSIM of {} distinct random pairs of trained-model maps",
            h.threshold_pairs
        ),
        format!(
            "randomization and consistency sample: {} test images, positives first, topped up with negatives",
            h.sample_size
        ),
        format!("LOW: mean SSIM must exceed {}", h.low_ssim),
        "segmenter image score: mean of the nonzero 8-bit probability cells".into(),
    ]
}
