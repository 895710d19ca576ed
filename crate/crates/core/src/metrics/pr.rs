use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of thresholds swept; maps with more unique values use
/// quantile-spaced thresholds over the sorted unique values.
pub const MAX_THRESHOLDS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Pixel-level precision-recall sweep, thresholds descending, recall
/// nondecreasing and ending at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Treats every pixel score as a binary classifier output against `truth`
/// (nonzero = positive). A pixel is predicted positive at threshold `t` when
/// its score is at least `t`.
pub fn pr_curve(scores: &[f64], truth: &[u8]) -> Result<PrCurve> {
    if scores.len() != truth.len() {
        return Err(Error::invalid(format!(
            "map has {} pixels but truth has {}",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("saliency map contains NaN"));
    }
    let positives = truth.iter().filter(|&&t| t != 0).count();
    if positives == 0 {
        return Err(Error::precondition("ground truth has no positive pixels; AUPRC is undefined"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut unique: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    unique.dedup();
    let thresholds: Vec<f64> = if unique.len() <= MAX_THRESHOLDS {
        unique
    } else {
        let last = unique.len() - 1;
        let mut t: Vec<f64> = (0..MAX_THRESHOLDS)
            .map(|k| unique[(k * last + (MAX_THRESHOLDS - 1) / 2) / (MAX_THRESHOLDS - 1)])
            .collect();
        t.dedup();
        t
    };

    let mut points = Vec::with_capacity(thresholds.len());
    let (mut tp, mut pp, mut next) = (0usize, 0usize, 0usize);
    for &t in &thresholds {
        while next < order.len() && scores[order[next]] >= t {
            pp += 1;
            tp += (truth[order[next]] != 0) as usize;
            next += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / pp as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(PrCurve { points })
}

/// Average precision: `Σ_k (R_k − R_{k−1}) P_k` with `R_0 = 0`.
pub fn auprc(curve: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

/// `auprc(pr_curve(scores, truth))` for an f32 map.
pub fn map_auprc(scores: &[f32], truth: &[u8]) -> Result<f64> {
    let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
    Ok(auprc(&pr_curve(&s, truth)?))
}
