use std::fs;
use std::path::{Path, PathBuf};

use saltrust::data::{Difficulty, Flavor, GeneratorParams};
use saltrust::harness::HarnessConfig;
use saltrust::metrics::SsimConfig;
use saltrust::models::{ClassifierTraining, SegmenterTraining};
use saltrust::saliency::{Method, SaliencyConfig};
use saltrust::seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Existing dataset directory; when set, `generator` is ignored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub import: Option<PathBuf>,
    pub generator: GeneratorParams,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            import: None,
            generator: GeneratorParams {
                difficulty: Difficulty::Medium,
                ..GeneratorParams::new(2000, Flavor::Segmentation, 64)
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Seeds of the two ARCH_A replicates.
    pub arch_a_seeds: [u64; 2],
    pub arch_b_seed: u64,
    /// Seeds of the two segmenter replicates.
    pub segmenter_seeds: [u64; 2],
    pub arch_a: ClassifierTraining,
    pub arch_b: ClassifierTraining,
    pub segmenter: SegmenterTraining,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            arch_a_seeds: [1, 2],
            arch_b_seed: 3,
            segmenter_seeds: [4, 5],
            arch_a: ClassifierTraining::default(),
            arch_b: ClassifierTraining {
                lr: 3e-4,
                max_epochs: 30,
                patience: 5,
                batch_size: 16,
            },
            segmenter: SegmenterTraining::default(),
        }
    }
}

/// Everything a run depends on. Component seeds are combined with `seed`, so
/// overriding it re-seeds the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub models: ModelsConfig,
    pub methods: Vec<Method>,
    pub saliency: SaliencyConfig,
    pub ssim: SsimConfig,
    pub harness: HarnessConfig,
    /// Used when `--out` is not given. Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            models: ModelsConfig::default(),
            methods: Method::ALL.to_vec(),
            saliency: SaliencyConfig::default(),
            ssim: SsimConfig::default(),
            harness: HarnessConfig::default(),
            output_dir: None,
        }
    }
}

/// Seeds actually used by each component.
#[derive(Clone, Debug, PartialEq)]
pub struct Seeds {
    pub dataset: u64,
    pub arch_a: [u64; 2],
    pub arch_b: u64,
    pub segmenter: [u64; 2],
    pub saliency: u64,
    pub harness: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.methods.is_empty() {
            return Err(Failure::Validation("methods: at least one method is required".into()));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(Failure::Validation("methods: duplicate entries".into()));
        }
        let field = |name: &str, r: saltrust::Result<()>| r.map_err(|e| Failure::Validation(format!("{name}: {e}")));
        field("saliency", self.saliency.validate())?;
        field("ssim", self.ssim.validate())?;
        field("harness", self.harness.validate())?;
        if self.harness.sample_size < self.harness.threshold_pairs + 1 {
            return Err(Failure::Validation(format!(
                "harness.sample_size: {} images cannot supply {} distinct threshold pairs from {} maps",
                self.harness.sample_size,
                self.harness.threshold_pairs,
                self.harness.threshold_pairs + 1
            )));
        }
        Ok(())
    }

    /// Canonical JSON of everything that affects results.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn seeds(&self) -> Seeds {
        let d = |s: u64| seed::derive(self.seed, s);
        let m = &self.models;
        Seeds {
            dataset: d(self.dataset.seed),
            arch_a: m.arch_a_seeds.map(d),
            arch_b: d(m.arch_b_seed),
            segmenter: m.segmenter_seeds.map(d),
            saliency: d(self.saliency.seed),
            harness: d(self.harness.seed),
        }
    }

    /// Saliency settings with the effective seed.
    pub fn effective_saliency(&self) -> SaliencyConfig {
        SaliencyConfig {
            seed: self.seeds().saliency,
            ..self.saliency.clone()
        }
    }

    /// Harness settings with the effective seed.
    pub fn effective_harness(&self) -> HarnessConfig {
        HarnessConfig {
            seed: self.seeds().harness,
            ..self.harness.clone()
        }
    }
}
