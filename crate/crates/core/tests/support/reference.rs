//! Independent f64 reference evaluator used as a finite-difference oracle.
//!
//! Deliberately naive: every layer is a direct loop over output elements with
//! bounds-checked padding, sharing no code with the engine's kernels.

#![allow(dead_code)]

use saltrust::engine::{LayerKind, LayerSpec, Network, WeightStore};

#[derive(Clone, Debug)]
pub struct RefTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Per-layer parameters in f64, keyed by layer name.
pub struct RefParams {
    pub layers: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl RefParams {
    pub fn from_store(w: &WeightStore) -> Self {
        Self {
            layers: w
                .iter()
                .map(|(n, p)| {
                    (
                        n.clone(),
                        p.weight.data().iter().map(|&v| v as f64).collect(),
                        p.bias.data().iter().map(|&v| v as f64).collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> (&[f64], &[f64]) {
        let (_, w, b) = self.layers.iter().find(|(n, _, _)| n == name).expect("layer params");
        (w, b)
    }

    pub fn get_mut(&mut self, name: &str) -> (&mut Vec<f64>, &mut Vec<f64>) {
        let (_, w, b) = self.layers.iter_mut().find(|(n, _, _)| n == name).expect("layer params");
        (w, b)
    }
}

/// Evaluates the network up to (not including) a trailing sigmoid. Returns the
/// output and the activation pattern (ReLU gates and max-pool winners).
///
/// With `frozen = Some(pattern)`, ReLU gates and max-pool winners are taken
/// from `pattern` instead of being recomputed, which turns the network into
/// the smooth function of the linear region containing the point where
/// `pattern` was recorded.
pub fn evaluate(net: &Network, params: &RefParams, x: &[f64], frozen: Option<&[u32]>) -> (Vec<f64>, Vec<u32>) {
    let layers: &[LayerSpec] = net.layers();
    let mut end = layers.len();
    while end > 1 && layers[end - 1].kind == LayerKind::Sigmoid {
        end -= 1;
    }
    let mut outs: Vec<RefTensor> = Vec::new();
    let mut pattern = Vec::new();
    let input = RefTensor {
        shape: net.input_shape().to_vec(),
        data: x.to_vec(),
    };
    for (i, layer) in layers[..end].iter().enumerate() {
        let prev = if i == 0 { &input } else { &outs[i - 1] };
        let out = match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (w, b) = params.get(&layer.name);
                let (h, wd) = (prev.shape[1], prev.shape[2]);
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (wd + 2 * padding - kernel) / stride + 1;
                let mut data = vec![0.0; out_channels * oh * ow];
                for oc in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[oc];
                            for ic in 0..*in_channels {
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        let iy = (oy * stride + ky) as i64 - *padding as i64;
                                        let ix = (ox * stride + kx) as i64 - *padding as i64;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                            continue;
                                        }
                                        acc += w[((oc * in_channels + ic) * kernel + ky) * kernel + kx]
                                            * prev.data[(ic * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                            data[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                RefTensor {
                    shape: vec![*out_channels, oh, ow],
                    data,
                }
            }
            LayerKind::Relu => {
                let start = pattern.len();
                pattern.extend(prev.data.iter().map(|&v| (v > 0.0) as u32));
                let gates = match frozen {
                    Some(f) => &f[start..start + prev.data.len()],
                    None => &pattern[start..],
                };
                RefTensor {
                    shape: prev.shape.clone(),
                    data: prev.data.iter().zip(gates).map(|(&v, &g)| if g == 1 { v } else { 0.0 }).collect(),
                }
            }
            LayerKind::Sigmoid => RefTensor {
                shape: prev.shape.clone(),
                data: prev.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
            },
            LayerKind::MaxPool { size, stride } | LayerKind::AvgPool { size, stride } => {
                let is_max = matches!(layer.kind, LayerKind::MaxPool { .. });
                let (c, h, w) = (prev.shape[0], prev.shape[1], prev.shape[2]);
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                let mut data = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let vals: Vec<f64> = (0..size * size)
                                .map(|k| prev.data[(ch * h + oy * stride + k / size) * w + ox * stride + k % size])
                                .collect();
                            if is_max {
                                let mut best = 0;
                                for k in 1..vals.len() {
                                    if vals[k] > vals[best] {
                                        best = k;
                                    }
                                }
                                if let Some(f) = frozen {
                                    best = f[pattern.len()] as usize;
                                }
                                pattern.push(best as u32);
                                data.push(vals[best]);
                            } else {
                                data.push(vals.iter().sum::<f64>() / vals.len() as f64);
                            }
                        }
                    }
                }
                RefTensor {
                    shape: vec![c, oh, ow],
                    data,
                }
            }
            LayerKind::GlobalAvgPool => {
                let (c, hw) = (prev.shape[0], prev.shape[1] * prev.shape[2]);
                RefTensor {
                    shape: vec![c],
                    data: (0..c)
                        .map(|ch| prev.data[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
                        .collect(),
                }
            }
            LayerKind::Dense { inputs, outputs } => {
                let (w, b) = params.get(&layer.name);
                RefTensor {
                    shape: vec![*outputs],
                    data: (0..*outputs)
                        .map(|o| b[o] + (0..*inputs).map(|i| w[o * inputs + i] * prev.data[i]).sum::<f64>())
                        .collect(),
                }
            }
            LayerKind::UpsampleNearest { factor } => {
                let (c, h, w) = (prev.shape[0], prev.shape[1], prev.shape[2]);
                let (oh, ow) = (h * factor, w * factor);
                let mut data = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            data.push(prev.data[(ch * h + y / factor) * w + x / factor]);
                        }
                    }
                }
                RefTensor {
                    shape: vec![c, oh, ow],
                    data,
                }
            }
            LayerKind::ConcatSkip { from } => {
                let src_idx = layers.iter().position(|l| &l.name == from).unwrap();
                let src = &outs[src_idx];
                let mut data = prev.data.clone();
                data.extend_from_slice(&src.data);
                RefTensor {
                    shape: vec![prev.shape[0] + src.shape[0], prev.shape[1], prev.shape[2]],
                    data,
                }
            }
        };
        outs.push(out);
    }
    (outs.pop().unwrap().data, pattern)
}

/// Scalar objective `Σ_k upstream_k · out_k` on a frozen activation pattern.
pub fn objective(net: &Network, params: &RefParams, x: &[f64], upstream: &[f64], frozen: &[u32]) -> f64 {
    let (out, _) = evaluate(net, params, x, Some(frozen));
    out.iter().zip(upstream).map(|(a, b)| a * b).sum()
}

/// Central-difference input gradient within the linear region containing `x`.
pub fn fd_input_grad(net: &Network, params: &RefParams, x: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
    let (_, pattern) = evaluate(net, params, x, None);
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            (objective(net, params, &xp, upstream, &pattern) - objective(net, params, &xm, upstream, &pattern)) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient for every weight and bias of `layer`,
/// concatenated as `[weights..., biases...]`.
pub fn fd_weight_grad(
    net: &Network,
    params: &mut RefParams,
    layer: &str,
    x: &[f64],
    upstream: &[f64],
    h: f64,
) -> Vec<f64> {
    let (_, pattern) = evaluate(net, params, x, None);
    let (nw, nb) = {
        let (w, b) = params.get(layer);
        (w.len(), b.len())
    };
    let mut out = Vec::with_capacity(nw + nb);
    for k in 0..nw + nb {
        let eval = |delta: f64, params: &mut RefParams| {
            let (w, b) = params.get_mut(layer);
            if k < nw {
                w[k] += delta;
            } else {
                b[k - nw] += delta;
            }
            let r = objective(net, params, x, upstream, &pattern);
            let (w, b) = params.get_mut(layer);
            if k < nw {
                w[k] -= delta;
            } else {
                b[k - nw] -= delta;
            }
            r
        };
        let fp = eval(h, params);
        let fm = eval(-h, params);
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Normwise relative error `max_i |a_i - b_i| / max_i |b_i|`.
pub fn rel_err(analytic: &[f32], oracle: &[f64]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in analytic.iter().zip(oracle) {
        num = num.max((a as f64 - b).abs());
        den = den.max(b.abs());
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
