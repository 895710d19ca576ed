//! Pixel-level precision-recall (AUPRC) and windowed structural similarity.

mod pr;
mod ssim;

pub use pr::{auprc, map_auprc, pr_curve, PrCurve, PrPoint, MAX_THRESHOLDS};
pub use ssim::{min_max_normalize, ssim, SsimConfig};

use crate::error::{Error, Result};
use crate::saliency::SaliencyMap;

/// SSIM between two saliency maps of the same shape.
pub fn map_ssim(a: &SaliencyMap, b: &SaliencyMap, cfg: &SsimConfig) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::invalid(format!(
            "cannot compare a {}x{} map with a {}x{} map",
            a.height, a.width, b.height, b.width
        )));
    }
    ssim(&a.values, &b.values, a.height, a.width, cfg)
}
