use std::collections::BTreeMap;
use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, ClassCounts, Dataset, DatasetManifest, Flavor, Sample, Split, DATASET_FORMAT};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    /// Peak intensity added inside a lesion.
    fn contrast(self) -> f32 {
        match self {
            Difficulty::Easy => 0.30,
            Difficulty::Medium => 0.18,
            Difficulty::Hard => 0.10,
        }
    }

    /// Base lesion radius range as a fraction of the shorter image side.
    fn radius(self) -> (f32, f32) {
        match self {
            Difficulty::Easy => (0.07, 0.13),
            Difficulty::Medium => (0.06, 0.11),
            Difficulty::Hard => (0.05, 0.09),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n: usize,
    pub positive_fraction: f64,
    pub difficulty: Difficulty,
    pub flavor: Flavor,
    pub height: usize,
    pub width: usize,
    /// Upper bound on a positive mask's area as a fraction of the image.
    pub max_lesion_fraction: f64,
    /// Half-width of the uniform per-image shift of the base intensity.
    pub exposure: f64,
}

impl GeneratorParams {
    pub fn new(n: usize, flavor: Flavor, side: usize) -> Self {
        Self {
            n,
            positive_fraction: flavor.default_positive_fraction(),
            difficulty: Difficulty::Easy,
            flavor,
            height: side,
            width: side,
            max_lesion_fraction: 0.25,
            exposure: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::invalid(format!("dataset size {} is below the minimum of 100", self.n)));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "positive_fraction {} must lie strictly between 0 and 1",
                self.positive_fraction
            )));
        }
        if !(self.max_lesion_fraction > 0.0 && self.max_lesion_fraction <= 1.0) {
            return Err(Error::invalid("max_lesion_fraction must lie in (0, 1]"));
        }
        if !(0.0..=0.3).contains(&self.exposure) {
            return Err(Error::invalid(format!("exposure {} must lie in [0, 0.3]", self.exposure)));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid("images must be at least 16x16"));
        }
        Ok(())
    }
}

/// Fractions of the train/val/test split.
pub const SPLIT_RATIO: [f64; 3] = [0.81, 0.09, 0.10];

/// Splits `n` items 81:9:10 (train and val rounded, test takes the rest).
fn split_sizes(n: usize) -> [usize; 3] {
    let train = (n as f64 * SPLIT_RATIO[0]).round() as usize;
    let val = (n as f64 * SPLIT_RATIO[1]).round() as usize;
    [train, val, n - train - val]
}

/// Generates a synthetic dataset; a pure function of `(params, seed)`.
pub fn generate(params: &GeneratorParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let n = params.n;
    let positives = ((n as f64 * params.positive_fraction).round() as usize).clamp(1, n - 1);

    // Stratified assignment: each class is split 81:9:10 on its own.
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, 1));
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng);
    let (pos_idx, neg_idx) = order.split_at(positives);
    let totals = split_sizes(n);
    let pos_sizes = split_sizes(positives);
    let mut assignment = vec![(Split::Train, 0u8); n];
    for (class_idx, sizes, label) in [
        (pos_idx, pos_sizes, 1u8),
        (neg_idx, [totals[0] - pos_sizes[0], totals[1] - pos_sizes[1], totals[2] - pos_sizes[2]], 0u8),
    ] {
        let mut it = class_idx.iter();
        for (split, count) in Split::ALL.into_iter().zip(sizes) {
            for &i in it.by_ref().take(count) {
                assignment[i] = (split, label);
            }
        }
    }

    let samples: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|i| render_sample(params, seed::derive(seed, 1000 + i as u64), i, assignment[i].1))
        .collect();

    let mut splits: BTreeMap<Split, Vec<String>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    let mut counts: BTreeMap<Split, ClassCounts> = Split::ALL.iter().map(|&s| (s, ClassCounts::default())).collect();
    for (i, &(split, label)) in assignment.iter().enumerate() {
        splits.get_mut(&split).unwrap().push(samples[i].id.clone());
        let c = counts.get_mut(&split).unwrap();
        if label == 1 {
            c.positive += 1;
        } else {
            c.negative += 1;
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            format: DATASET_FORMAT.to_string(),
            flavor: params.flavor,
            height: params.height,
            width: params.width,
            seed,
            generator: Some(params.clone()),
            splits,
            counts,
        },
        samples,
    })
}

fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

fn render_sample(p: &GeneratorParams, sample_seed: u64, index: usize, label: u8) -> Sample {
    let (h, w) = (p.height, p.width);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut img = background(h, w, p.exposure as f32, &mut rng);
    let mut mask = vec![0u8; h * w];
    let mut boxes = Vec::new();

    if label == 1 {
        let count = if rng.random::<f32>() < 0.35 { 2 } else { 1 };
        let cap = (p.max_lesion_fraction * (h * w) as f64).floor().max(1.0) as usize;
        let lesions: Vec<Lesion> = (0..count).map(|_| Lesion::random(p, &mut rng)).collect();
        let mut scale = 1.0f32;
        loop {
            mask.fill(0);
            boxes.clear();
            for lesion in &lesions {
                let support = lesion.support(h, w, scale);
                let b = tight_box(&support, h, w);
                for (m, &s) in mask.iter_mut().zip(&support) {
                    *m |= s;
                }
                boxes.push(b);
            }
            let area = mask.iter().filter(|&&m| m != 0).count();
            if area <= cap || scale < 0.05 {
                break;
            }
            scale *= 0.8;
        }
        let contrast = p.difficulty.contrast();
        for lesion in &lesions {
            lesion.paint(&mut img, h, w, scale, contrast);
        }
    }

    for v in img.iter_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    Sample {
        id: format!("s{index:05}"),
        height: h,
        width: w,
        image: img,
        label,
        mask,
        boxes,
    }
}

/// Smooth low-frequency texture plus rib-like horizontal bands around a flat
/// base level drawn from `0.45 ± exposure`. All periodic terms complete whole
/// cycles across the image.
fn background(h: usize, w: usize, exposure: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let base = if exposure > 0.0 { 0.45 + rng.random_range(-exposure..exposure) } else { 0.45 };
    let mut img = vec![base; h * w];
    for _ in 0..4 {
        let (kx, ky) = loop {
            let kx = rng.random_range(0..3) as f32;
            let ky = rng.random_range(0..3) as f32;
            if kx + ky > 0.0 {
                break (kx, ky);
            }
        };
        let amp = rng.random_range(0.01..0.03f32);
        let phase = rng.random_range(0.0..2.0 * PI);
        for y in 0..h {
            for x in 0..w {
                img[y * w + x] += amp * (2.0 * PI * (kx * x as f32 / w as f32 + ky * y as f32 / h as f32) + phase).cos();
            }
        }
    }
    let cycles = rng.random_range(5..8) as f32;
    let phase = rng.random_range(0.0..2.0 * PI);
    for y in 0..h {
        let band = 0.05 * (2.0 * PI * cycles * y as f32 / h as f32 + phase).sin();
        img[y * w..(y + 1) * w].iter_mut().for_each(|v| *v += band);
    }
    let noise = Normal::new(0.0f32, 0.015).expect("valid normal");
    img.iter_mut().for_each(|v| *v += noise.sample(rng));
    img
}

struct Lesion {
    cx: f32,
    cy: f32,
    radius: f32,
    harmonics: [(f32, f32); 3],
}

impl Lesion {
    fn random(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = (p.height as f32, p.width as f32);
        let (rmin, rmax) = p.difficulty.radius();
        let side = h.min(w);
        Self {
            cx: rng.random_range(0.2 * w..0.8 * w),
            cy: rng.random_range(0.2 * h..0.8 * h),
            radius: rng.random_range(rmin..rmax) * side,
            harmonics: [0; 3].map(|_| (rng.random_range(0.0..0.15f32), rng.random_range(0.0..2.0 * PI))),
        }
    }

    /// Boundary radius along angle `theta`.
    fn boundary(&self, theta: f32, scale: f32) -> f32 {
        let wobble: f32 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(a, phi))| a * ((k as f32 + 2.0) * theta + phi).cos())
            .sum();
        self.radius * scale * (1.0 + wobble)
    }

    /// Normalized radial position of the pixel centre, `< 1` inside.
    fn rho(&self, x: usize, y: usize, scale: f32) -> f32 {
        let dx = x as f32 + 0.5 - self.cx;
        let dy = y as f32 + 0.5 - self.cy;
        let d = (dx * dx + dy * dy).sqrt();
        d / self.boundary(dy.atan2(dx), scale)
    }

    fn support(&self, h: usize, w: usize, scale: f32) -> Vec<u8> {
        let mut s = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                if self.rho(x, y, scale) < 1.0 {
                    s[y * w + x] = 1;
                }
            }
        }
        if s.iter().all(|&v| v == 0) {
            let x = (self.cx as usize).min(w - 1);
            let y = (self.cy as usize).min(h - 1);
            s[y * w + x] = 1;
        }
        s
    }

    fn paint(&self, img: &mut [f32], h: usize, w: usize, scale: f32, contrast: f32) {
        let support = self.support(h, w, scale);
        for y in 0..h {
            for x in 0..w {
                if support[y * w + x] != 0 {
                    let r = self.rho(x, y, scale).min(1.0);
                    img[y * w + x] += contrast * (1.0 - 0.4 * r * r);
                }
            }
        }
    }
}

fn tight_box(support: &[u8], h: usize, w: usize) -> BoundingBox {
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if support[y * w + x] != 0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    BoundingBox {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    }
}
