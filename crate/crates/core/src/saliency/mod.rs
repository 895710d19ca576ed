//! The eight gradient-based saliency methods. Every method explains the
//! pre-sigmoid logit and returns raw signed values (no absolute value).

mod methods;
pub mod xrai;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use methods::{
    bilinear_resize, grad, gradcam, guided_backprop, guided_gradcam, integrated_gradients, integrated_gradients_steps,
    smooth_ig, smoothgrad,
};

use crate::data::write_pgm;
use crate::engine::{Network, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GRAD")]
    Grad,
    #[serde(rename = "SG")]
    SmoothGrad,
    #[serde(rename = "IG")]
    IntegratedGradients,
    #[serde(rename = "SIG")]
    SmoothIg,
    #[serde(rename = "GCAM")]
    GradCam,
    #[serde(rename = "XRAI")]
    Xrai,
    #[serde(rename = "GBP")]
    GuidedBackprop,
    #[serde(rename = "GGCAM")]
    GuidedGradCam,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Grad,
        Method::SmoothGrad,
        Method::IntegratedGradients,
        Method::SmoothIg,
        Method::GradCam,
        Method::Xrai,
        Method::GuidedBackprop,
        Method::GuidedGradCam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grad => "GRAD",
            Method::SmoothGrad => "SG",
            Method::IntegratedGradients => "IG",
            Method::SmoothIg => "SIG",
            Method::GradCam => "GCAM",
            Method::Xrai => "XRAI",
            Method::GuidedBackprop => "GBP",
            Method::GuidedGradCam => "GGCAM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown saliency method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyConfig {
    pub ig_steps: usize,
    pub sg_samples: usize,
    /// Noise standard deviation as a fraction of the image's value range.
    pub sg_noise_sigma: f32,
    /// Conv layer for GradCAM; the last conv layer when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradcam_layer: Option<String>,
    pub xrai_segments: usize,
    pub seed: u64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self {
            ig_steps: 25,
            sg_samples: 25,
            sg_noise_sigma: 0.15,
            gradcam_layer: None,
            xrai_segments: 60,
            seed: 0,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::invalid("ig_steps must be at least 1"));
        }
        if self.sg_samples == 0 {
            return Err(Error::invalid("sg_samples must be at least 1"));
        }
        if !(self.sg_noise_sigma > 0.0 && self.sg_noise_sigma < 1.0) {
            return Err(Error::invalid(format!(
                "sg_noise_sigma {} must lie strictly between 0 and 1",
                self.sg_noise_sigma
            )));
        }
        if self.xrai_segments < 2 {
            return Err(Error::invalid("xrai_segments must be at least 2"));
        }
        Ok(())
    }
}

/// A raw attribution map aligned with its input image.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub method: Method,
    pub image_id: String,
    pub model_fingerprint: u64,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

const SALF_MAGIC: &[u8; 8] = b"SALF1\0\0\0";

impl SaliencyMap {
    /// Raw float32 little-endian payload behind a 16-byte header:
    /// `SALF1` NUL-padded to 8 bytes, then height and width as u32.
    pub fn to_salf_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(SALF_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a `.salf` payload into `(height, width, values)`.
    pub fn parse_salf(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
        let bad = |reason: String| Error::Format { format: "SALF1", reason };
        if bytes.len() < 16 || &bytes[..8] != SALF_MAGIC {
            return Err(bad("missing SALF1 header".into()));
        }
        let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() != 4 * h * w {
            return Err(bad(format!("expected {} payload bytes for {h}x{w}, found {}", 4 * h * w, body.len())));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((h, w, values))
    }

    /// Min-max scaled 8-bit rendering; constant maps render mid-gray.
    pub fn to_gray(&self) -> Vec<u8> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(hi > lo) {
            return vec![128; self.values.len()];
        }
        self.values
            .iter()
            .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    }

    /// Writes `<stem>.salf` and `<stem>.pgm` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.salf")), self.to_salf_bytes())?;
        write_pgm(&dir.join(format!("{stem}.pgm")), self.width, self.height, &self.to_gray())
    }
}

/// Computes several methods for one image, sharing work between them
/// (XRAI reuses the IG map; GGCAM reuses GCAM and GBP). Maps come back in the
/// order of `methods`.
pub fn compute_maps(
    net: &Network,
    weights: &WeightStore,
    image: &Tensor,
    image_id: &str,
    methods: &[Method],
    cfg: &SaliencyConfig,
) -> Result<Vec<SaliencyMap>> {
    cfg.validate()?;
    let shape = net.input_shape();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::invalid(format!("saliency needs a single-channel input, network takes {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let wants = |m: Method| methods.contains(&m);
    let ig = if wants(Method::IntegratedGradients) || wants(Method::Xrai) {
        Some(integrated_gradients(net, weights, image, cfg)?)
    } else {
        None
    };
    let cam = if wants(Method::GradCam) || wants(Method::GuidedGradCam) {
        Some(gradcam(net, weights, image, cfg)?)
    } else {
        None
    };
    let gbp = if wants(Method::GuidedBackprop) || wants(Method::GuidedGradCam) {
        Some(guided_backprop(net, weights, image)?)
    } else {
        None
    };
    let fingerprint = weights.fingerprint();
    methods
        .iter()
        .map(|&method| {
            let values = match method {
                Method::Grad => grad(net, weights, image)?,
                Method::SmoothGrad => smoothgrad(net, weights, image, cfg)?,
                Method::IntegratedGradients => ig.clone().expect("computed above"),
                Method::SmoothIg => smooth_ig(net, weights, image, cfg)?,
                Method::GradCam => cam.clone().expect("computed above"),
                Method::Xrai => {
                    let labels = xrai::segment(image.data(), h, w, cfg.xrai_segments)?;
                    xrai::region_map(ig.as_ref().expect("computed above"), &labels)
                }
                Method::GuidedBackprop => gbp.clone().expect("computed above"),
                Method::GuidedGradCam => {
                    let (c, g) = (cam.as_ref().expect("computed above"), gbp.as_ref().expect("computed above"));
                    c.iter().zip(g).map(|(a, b)| a * b).collect()
                }
            };
            Ok(SaliencyMap {
                method,
                image_id: image_id.to_string(),
                model_fingerprint: fingerprint,
                height: h,
                width: w,
                values,
            })
        })
        .collect()
}

/// One method on one image.
pub fn compute(
    method: Method,
    net: &Network,
    weights: &WeightStore,
    image: &Tensor,
    image_id: &str,
    cfg: &SaliencyConfig,
) -> Result<SaliencyMap> {
    Ok(compute_maps(net, weights, image, image_id, &[method], cfg)?.remove(0))
}

/// XRAI from scratch (IG computed internally).
pub fn xrai_map(net: &Network, weights: &WeightStore, image: &Tensor, cfg: &SaliencyConfig) -> Result<Vec<f32>> {
    Ok(compute(Method::Xrai, net, weights, image, "", cfg)?.values)
}
