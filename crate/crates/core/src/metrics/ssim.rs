use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Windowed SSIM settings. Maps are min-max normalized before comparison, so
/// the dynamic range is fixed at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size % 2 == 0 {
            return Err(Error::invalid(format!("SSIM window size {} must be odd", self.window_size)));
        }
        if !(self.sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(Error::invalid("SSIM sigma, k1 and k2 must be positive"));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as f64;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Rescales to [0, 1]; a constant map becomes 0.5 everywhere.
pub fn min_max_normalize(values: &[f32]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|&v| (v as f64 - lo) / (hi - lo)).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every window position that fits inside the map, after
/// min-max normalizing each map independently.
pub fn ssim(a: &[f32], b: &[f32], h: usize, w: usize, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::invalid(format!(
            "SSIM inputs must both be {h}x{w}, got {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if h < cfg.window_size || w < cfg.window_size {
        return Err(Error::invalid(format!(
            "{h}x{w} map is smaller than the {0}x{0} SSIM window",
            cfg.window_size
        )));
    }
    let (a, b) = (min_max_normalize(a), min_max_normalize(b));
    let taps = cfg.taps();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter(&a, h, w, &taps);
    let mu_b = filter(&b, h, w, &taps);
    let aa = filter(&prod(&a, &a), h, w, &taps);
    let bb = filter(&prod(&b, &b), h, w, &taps);
    let ab = filter(&prod(&a, &b), h, w, &taps);
    let c1 = cfg.k1 * cfg.k1;
    let c2 = cfg.k2 * cfg.k2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}
