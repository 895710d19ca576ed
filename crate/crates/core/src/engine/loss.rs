//! Losses and their gradients with respect to logits.

use serde::{Deserialize, Serialize};

use super::network::sigmoid;
use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy `-(1/N) Σ (y log p + (1-y) log(1-p))`,
/// with `p` clamped to `[ε, 1-ε]`.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("BCE over an empty batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "BCE got {} probabilities and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= match y {
            1 => p.ln(),
            0 => (1.0 - p).ln(),
            _ => return Err(Error::invalid(format!("label {y} is not 0 or 1"))),
        };
    }
    Ok(total / probs.len() as f64)
}

/// d(BCE)/d(logit) for one example: `sigmoid(z) - y`.
pub fn bce_logit_grad(logit: f32, label: u8) -> f32 {
    sigmoid(logit) - label as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalDice {
    /// Weight on the positive class in the focal term.
    pub alpha: f32,
    pub gamma: f32,
    /// Share of the focal term; Dice gets the rest.
    pub focal_weight: f32,
    pub dice_smooth: f32,
}

impl Default for FocalDice {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            focal_weight: 0.5,
            dice_smooth: 1.0,
        }
    }
}

impl FocalDice {
    /// Loss value and gradient with respect to each pixel logit.
    /// Focal is averaged over pixels; Dice is computed over the whole map.
    pub fn loss_and_grad(&self, logits: &[f32], target: &[f32]) -> (f64, Vec<f32>) {
        assert_eq!(logits.len(), target.len());
        let n = logits.len() as f64;
        let (a, gamma) = (self.alpha as f64, self.gamma as f64);
        let eps = BCE_EPS;
        let mut focal = 0.0f64;
        let mut grad = vec![0.0f32; logits.len()];
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z) as f64).collect();
        for (i, (&p, &y)) in probs.iter().zip(target).enumerate() {
            let pc = p.clamp(eps, 1.0 - eps);
            let (loss, dz) = if y > 0.5 {
                let q = 1.0 - pc;
                (
                    -a * q.powf(gamma) * pc.ln(),
                    a * gamma * pc * q.powf(gamma) * pc.ln() - a * q.powf(gamma + 1.0),
                )
            } else {
                let q = 1.0 - pc;
                (
                    -(1.0 - a) * pc.powf(gamma) * q.ln(),
                    (1.0 - a) * pc.powf(gamma + 1.0) - (1.0 - a) * gamma * q * pc.powf(gamma) * q.ln(),
                )
            };
            focal += loss;
            grad[i] = (self.focal_weight as f64 * dz / n) as f32;
        }
        focal /= n;

        let s = self.dice_smooth as f64;
        let inter: f64 = probs.iter().zip(target).map(|(&p, &y)| p * y as f64).sum();
        let psum: f64 = probs.iter().sum();
        let ysum: f64 = target.iter().map(|&y| y as f64).sum();
        let denom = psum + ysum + s;
        let dice = (2.0 * inter + s) / denom;
        let dw = 1.0 - self.focal_weight as f64;
        for (i, (&p, &y)) in probs.iter().zip(target).enumerate() {
            let d_dice_dp = (2.0 * y as f64 * denom - (2.0 * inter + s)) / (denom * denom);
            grad[i] += (-dw * d_dice_dp * p * (1.0 - p)) as f32;
        }
        let loss = self.focal_weight as f64 * focal + dw * (1.0 - dice);
        (loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!(bce_loss(&[1.0 - BCE_EPS], &[1]).unwrap() < 1e-6);
        assert!((bce_loss(&[0.5], &[1]).unwrap() - ln2).abs() < 1e-12);
        assert!((bce_loss(&[0.5, 0.5], &[1, 0]).unwrap() - ln2).abs() < 1e-12);
        assert!(bce_loss(&[], &[]).is_err());
        // Clamping keeps log(0) finite.
        assert!(bce_loss(&[0.0], &[1]).unwrap().is_finite());
    }

    #[test]
    fn focal_dice_gradient_matches_finite_differences() {
        let fd = FocalDice::default();
        let logits: Vec<f32> = (0..12).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.4).collect();
        let target: Vec<f32> = (0..12).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let (_, g) = fd.loss_and_grad(&logits, &target);
        for i in 0..logits.len() {
            let h = 1e-2f32;
            let mut up = logits.clone();
            up[i] += h;
            let mut dn = logits.clone();
            dn[i] -= h;
            let num = (fd.loss_and_grad(&up, &target).0 - fd.loss_and_grad(&dn, &target).0) / (2.0 * h as f64);
            assert!((num - g[i] as f64).abs() < 1e-4 * num.abs().max(1e-2), "pixel {i}: {num} vs {}", g[i]);
        }
    }
}
