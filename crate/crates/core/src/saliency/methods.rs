use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SaliencyConfig;
use crate::engine::{BackwardOptions, LayerKind, Network, ReluRule, WeightStore};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Gradient of the logit with respect to the input.
pub fn grad(net: &Network, weights: &WeightStore, image: &Tensor) -> Result<Vec<f32>> {
    input_gradient(net, weights, image, ReluRule::Standard)
}

/// Guided backpropagation.
pub fn guided_backprop(net: &Network, weights: &WeightStore, image: &Tensor) -> Result<Vec<f32>> {
    input_gradient(net, weights, image, ReluRule::Guided)
}

fn input_gradient(net: &Network, weights: &WeightStore, image: &Tensor, rule: ReluRule) -> Result<Vec<f32>> {
    check_scalar(net)?;
    let (_, tape) = net.forward(weights, image)?;
    Ok(net.backward_input(&tape, weights, rule)?.into_data())
}

fn check_scalar(net: &Network) -> Result<()> {
    if net.logit_shape().iter().product::<usize>() != 1 {
        return Err(Error::invalid(format!(
            "saliency needs a scalar logit, network emits {:?}",
            net.logit_shape()
        )));
    }
    Ok(())
}

/// Gaussian input perturbations for one image. The stream depends only on the
/// configured seed and the image contents, so every model sees the same noise.
fn noise_stream(cfg: &SaliencyConfig, image: &Tensor) -> (ChaCha8Rng, Normal<f32>) {
    let data = image.data();
    let image_hash = data
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, v| seed::mix(h ^ v.to_bits() as u64));
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let sigma = cfg.sg_noise_sigma * (hi - lo).max(0.0);
    let rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, image_hash));
    (rng, Normal::new(0.0, sigma).expect("finite sigma"))
}

fn perturbed(image: &Tensor, rng: &mut ChaCha8Rng, noise: &Normal<f32>) -> Tensor {
    let data = image.data().iter().map(|&v| v + noise.sample(rng)).collect();
    Tensor::new(image.shape().to_vec(), data).expect("same shape")
}

/// Mean of `inner` over `cfg.sg_samples` noisy copies of the image.
fn smoothed(
    cfg: &SaliencyConfig,
    image: &Tensor,
    mut inner: impl FnMut(&Tensor) -> Result<Vec<f32>>,
) -> Result<Vec<f32>> {
    let (mut rng, noise) = noise_stream(cfg, image);
    let mut acc = vec![0.0f64; image.len()];
    for _ in 0..cfg.sg_samples {
        let x = perturbed(image, &mut rng, &noise);
        for (a, g) in acc.iter_mut().zip(inner(&x)?) {
            *a += g as f64;
        }
    }
    let inv = 1.0 / cfg.sg_samples as f64;
    Ok(acc.into_iter().map(|a| (a * inv) as f32).collect())
}

pub fn smoothgrad(net: &Network, weights: &WeightStore, image: &Tensor, cfg: &SaliencyConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    smoothed(cfg, image, |x| grad(net, weights, x))
}

/// Integrated gradients from an all-zero baseline with a right Riemann sum
/// of `steps` points.
pub fn integrated_gradients_steps(net: &Network, weights: &WeightStore, image: &Tensor, steps: usize) -> Result<Vec<f32>> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    check_scalar(net)?;
    let mut acc = vec![0.0f64; image.len()];
    for k in 1..=steps {
        let alpha = k as f32 / steps as f32;
        let x = image.map(|v| v * alpha);
        for (a, g) in acc.iter_mut().zip(grad(net, weights, &x)?) {
            *a += g as f64;
        }
    }
    let inv = 1.0 / steps as f64;
    Ok(acc
        .iter()
        .zip(image.data())
        .map(|(&a, &x)| (x as f64 * a * inv) as f32)
        .collect())
}

pub fn integrated_gradients(
    net: &Network,
    weights: &WeightStore,
    image: &Tensor,
    cfg: &SaliencyConfig,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    integrated_gradients_steps(net, weights, image, cfg.ig_steps)
}

pub fn smooth_ig(net: &Network, weights: &WeightStore, image: &Tensor, cfg: &SaliencyConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    smoothed(cfg, image, |x| integrated_gradients_steps(net, weights, x, cfg.ig_steps))
}

/// Layer whose activations GradCAM weighs: the ReLU directly after the chosen
/// conv layer when there is one, otherwise the conv output itself.
fn gradcam_target(net: &Network, cfg: &SaliencyConfig) -> Result<usize> {
    let name = match &cfg.gradcam_layer {
        Some(n) => n.as_str(),
        None => net
            .last_conv()
            .ok_or_else(|| Error::invalid("GradCAM needs a network with a conv layer"))?,
    };
    let idx = net
        .layer_index(name)
        .ok_or_else(|| Error::invalid(format!("GradCAM layer `{name}` does not exist")))?;
    if !matches!(net.layers()[idx].kind, LayerKind::Conv2d { .. }) {
        return Err(Error::invalid(format!("GradCAM layer `{name}` is not a conv layer")));
    }
    Ok(match net.layers().get(idx + 1) {
        Some(next) if next.kind == LayerKind::Relu => idx + 1,
        _ => idx,
    })
}

pub fn gradcam(net: &Network, weights: &WeightStore, image: &Tensor, cfg: &SaliencyConfig) -> Result<Vec<f32>> {
    check_scalar(net)?;
    let target = gradcam_target(net, cfg)?;
    let (_, tape) = net.forward(weights, image)?;
    let upstream = Tensor::filled(net.logit_shape(), 1.0);
    let g = net.backward(
        &tape,
        weights,
        &upstream,
        BackwardOptions {
            capture: Some(&net.layers()[target].name),
            ..Default::default()
        },
    )?;
    let dadx = g.captured.expect("captured layer gradient");
    let acts = tape.layer_output(target);
    let (c, h, w) = match *acts.shape() {
        [c, h, w] => (c, h, w),
        _ => unreachable!("conv output is [C, H, W]"),
    };
    let plane = h * w;
    let mut cam = vec![0.0f32; plane];
    for ch in 0..c {
        let gsum: f64 = dadx.data()[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).sum();
        let weight = (gsum / plane as f64) as f32;
        if weight == 0.0 {
            continue;
        }
        for (m, &a) in cam.iter_mut().zip(&acts.data()[ch * plane..(ch + 1) * plane]) {
            *m += weight * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let shape = net.input_shape();
    Ok(bilinear_resize(&cam, h, w, shape[1], shape[2]))
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn bilinear_resize(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let s = ((o as f32 + 0.5) * n_in as f32 / n_out as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f32)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Elementwise product of GradCAM and guided backpropagation maps.
pub fn guided_gradcam(net: &Network, weights: &WeightStore, image: &Tensor, cfg: &SaliencyConfig) -> Result<Vec<f32>> {
    let cam = gradcam(net, weights, image, cfg)?;
    let gbp = guided_backprop(net, weights, image)?;
    Ok(cam.iter().zip(&gbp).map(|(a, b)| a * b).collect())
}
