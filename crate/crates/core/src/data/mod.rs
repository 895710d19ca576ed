//! Datasets: samples with pixel masks and boxes, split manifests, the
//! synthetic generator, and the on-disk directory format.

mod io;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use io::{export_dataset, import_dataset, read_pgm, write_pgm, Pgm};
pub use synth::{generate, Difficulty, GeneratorParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT: &str = "saltrust-dataset/1";

/// Which ground truth the utility test scores against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// Irregular pixel masks.
    Segmentation,
    /// Axis-aligned boxes rasterized to masks.
    Detection,
}

impl Flavor {
    pub fn default_positive_fraction(self) -> f64 {
        match self {
            Flavor::Segmentation => 0.22,
            Flavor::Detection => 0.40,
        }
    }
}

/// Axis-aligned box: top-left corner plus width and height, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Row-major intensities in `[0, 1]`.
    pub image: Vec<f32>,
    pub label: u8,
    /// Row-major 0/1 lesion support; all zero iff `label == 0`.
    pub mask: Vec<u8>,
    pub boxes: Vec<BoundingBox>,
}

impl Sample {
    pub fn tensor(&self) -> Tensor {
        Tensor::image(self.height, self.width, self.image.clone()).expect("sample dimensions")
    }

    pub fn boxes_mask(&self) -> Vec<u8> {
        rasterize_boxes(&self.boxes, self.height, self.width)
    }

    /// Pixel truth for the given flavor.
    pub fn truth(&self, flavor: Flavor) -> Vec<u8> {
        match flavor {
            Flavor::Segmentation => self.mask.clone(),
            Flavor::Detection => self.boxes_mask(),
        }
    }

    pub fn mask_area(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}

pub fn rasterize_boxes(boxes: &[BoundingBox], height: usize, width: usize) -> Vec<u8> {
    let mut m = vec![0u8; height * width];
    for b in boxes {
        for y in b.y..(b.y + b.h).min(height) {
            for x in b.x..(b.x + b.w).min(width) {
                m[y * width + x] = 1;
            }
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub flavor: Flavor,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorParams>,
    pub splits: BTreeMap<Split, Vec<String>>,
    pub counts: BTreeMap<Split, ClassCounts>,
}

/// Samples in manifest order plus the manifest itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples of one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        let index: BTreeMap<&str, &Sample> = self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        self.manifest
            .splits
            .get(&split)
            .map(|ids| ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect())
            .unwrap_or_default()
    }

    pub fn flavor(&self) -> Flavor {
        self.manifest.flavor
    }

    /// Recomputes per-split class counts from the samples.
    pub fn recount(&self) -> BTreeMap<Split, ClassCounts> {
        Split::ALL
            .iter()
            .map(|&s| {
                let mut c = ClassCounts::default();
                for sample in self.split(s) {
                    if sample.label == 1 {
                        c.positive += 1;
                    } else {
                        c.negative += 1;
                    }
                }
                (s, c)
            })
            .collect()
    }

    /// Checks every sample invariant and the stored counts.
    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            let n = s.height * s.width;
            if s.height != self.manifest.height || s.width != self.manifest.width {
                return Err(Error::invalid(format!(
                    "sample {} is {}x{}, dataset is {}x{}",
                    s.id, s.height, s.width, self.manifest.height, self.manifest.width
                )));
            }
            if s.image.len() != n || s.mask.len() != n {
                return Err(Error::invalid(format!("sample {} has inconsistent buffer sizes", s.id)));
            }
            let area = s.mask_area();
            if (area > 0) != (s.label == 1) {
                return Err(Error::invalid(format!(
                    "sample {}: label {} but mask area {area}",
                    s.id, s.label
                )));
            }
            if s.label == 0 && !s.boxes.is_empty() {
                return Err(Error::invalid(format!("negative sample {} has boxes", s.id)));
            }
            for b in &s.boxes {
                if b.w == 0 || b.h == 0 || b.x + b.w > s.width || b.y + b.h > s.height {
                    return Err(Error::invalid(format!("sample {}: box {b:?} outside the image", s.id)));
                }
            }
        }
        let counts = self.recount();
        if counts != self.manifest.counts {
            return Err(Error::invalid(format!(
                "split counts {counts:?} do not match manifest {:?}",
                self.manifest.counts
            )));
        }
        Ok(())
    }
}

/// Pixelwise mean of the ground truths of all positive samples given.
pub fn average_mask(samples: &[&Sample], flavor: Flavor) -> Result<Vec<f32>> {
    let positives: Vec<&&Sample> = samples.iter().filter(|s| s.label == 1).collect();
    let first = positives
        .first()
        .ok_or_else(|| Error::precondition("average mask needs at least one positive sample"))?;
    let n = first.height * first.width;
    let mut acc = vec![0.0f64; n];
    for s in &positives {
        if s.height * s.width != n {
            return Err(Error::invalid(format!("sample {} has a different size", s.id)));
        }
        for (a, &m) in acc.iter_mut().zip(&s.truth(flavor)) {
            *a += m as f64;
        }
    }
    let inv = 1.0 / positives.len() as f64;
    Ok(acc.into_iter().map(|v| (v * inv) as f32).collect())
}
