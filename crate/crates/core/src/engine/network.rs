//! Layer graphs with forward evaluation and hand-written backward passes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::layer::{LayerKind, LayerSpec};
use super::ops::{self, ConvGeom, PoolGeom};
use super::weights::{init_truncated_normal, LayerParams, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How ReLU layers route gradients during the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReluRule {
    /// Exact derivative: pass where the forward input was positive.
    Standard,
    /// Guided backpropagation: pass only where the forward input was positive
    /// and the incoming gradient is positive.
    Guided,
}

/// A validated sequence of layers with resolved shapes.
///
/// Layers run in order; `concat-skip` layers additionally read the output of
/// an earlier named layer. A trailing `sigmoid` is the inference head:
/// [`Network::forward`] stops in front of it and returns the logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDef", into = "NetworkDef")]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    out_shapes: Vec<Vec<usize>>,
    skip_sources: Vec<Option<usize>>,
    logit_end: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetworkDef {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl TryFrom<NetworkDef> for Network {
    type Error = Error;
    fn try_from(d: NetworkDef) -> Result<Self> {
        Network::new(d.input_shape, d.layers)
    }
}

impl From<Network> for NetworkDef {
    fn from(n: Network) -> Self {
        NetworkDef {
            input_shape: n.input_shape,
            layers: n.layers,
        }
    }
}

/// Cached forward activations for one evaluation.
#[derive(Clone, Debug)]
pub struct Tape {
    input: Tensor,
    outputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<u32>>>,
    fingerprint: u64,
}

impl Tape {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// The logit (scalar classifier) or logit map (segmenter).
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("network has layers")
    }

    pub fn layer_output(&self, index: usize) -> &Tensor {
        &self.outputs[index]
    }
}

/// Options for the general backward pass.
#[derive(Clone, Copy, Debug)]
pub struct BackwardOptions<'a> {
    pub relu_rule: ReluRule,
    pub weight_grads: bool,
    /// Also return the gradient with respect to this layer's output.
    pub capture: Option<&'a str>,
}

impl Default for BackwardOptions<'_> {
    fn default() -> Self {
        Self {
            relu_rule: ReluRule::Standard,
            weight_grads: false,
            capture: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub input: Tensor,
    pub weights: Option<WeightStore>,
    pub captured: Option<Tensor>,
}

fn spatial(shape: &[usize], layer: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidLayer {
            layer: layer.to_string(),
            reason: format!("expects a [C, H, W] input, got {shape:?}"),
        }),
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("invalid input shape {input_shape:?}")));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut out_shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        let mut skip_sources = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            if index.insert(layer.name.as_str(), i).is_some() {
                return Err(Error::InvalidLayer {
                    layer: layer.name.clone(),
                    reason: "duplicate layer name".into(),
                });
            }
            let prev = if i == 0 { &input_shape } else { &out_shapes[i - 1] };
            let invalid = |reason: String| Error::InvalidLayer {
                layer: layer.name.clone(),
                reason,
            };
            let mut skip = None;
            let shape = match &layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(prev, &layer.name)?;
                    if *stride < 1 || *kernel < 1 || *out_channels < 1 {
                        return Err(invalid("stride, kernel and channels must be >= 1".into()));
                    }
                    if c != *in_channels {
                        return Err(Error::Shape {
                            layer: layer.name.clone(),
                            expected: vec![*in_channels, h, w],
                            got: prev.clone(),
                        });
                    }
                    if *kernel > h + 2 * padding || *kernel > w + 2 * padding {
                        return Err(invalid(format!(
                            "kernel {kernel} exceeds padded input {}x{}",
                            h + 2 * padding,
                            w + 2 * padding
                        )));
                    }
                    vec![
                        *out_channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ]
                }
                LayerKind::Relu | LayerKind::Sigmoid => prev.clone(),
                LayerKind::MaxPool { size, stride } | LayerKind::AvgPool { size, stride } => {
                    let (c, h, w) = spatial(prev, &layer.name)?;
                    if *stride < 1 || *size < 1 {
                        return Err(invalid("pool size and stride must be >= 1".into()));
                    }
                    if *size > h || *size > w {
                        return Err(invalid(format!("pool window {size} exceeds input {h}x{w}")));
                    }
                    vec![c, (h - size) / stride + 1, (w - size) / stride + 1]
                }
                LayerKind::GlobalAvgPool => {
                    let (c, _, _) = spatial(prev, &layer.name)?;
                    vec![c]
                }
                LayerKind::Dense { inputs, outputs } => {
                    let n: usize = prev.iter().product();
                    if n != *inputs {
                        return Err(Error::Shape {
                            layer: layer.name.clone(),
                            expected: vec![*inputs],
                            got: prev.clone(),
                        });
                    }
                    if *outputs < 1 {
                        return Err(invalid("dense layer needs >= 1 output".into()));
                    }
                    vec![*outputs]
                }
                LayerKind::UpsampleNearest { factor } => {
                    let (c, h, w) = spatial(prev, &layer.name)?;
                    if *factor < 1 {
                        return Err(invalid("upsample factor must be >= 1".into()));
                    }
                    vec![c, h * factor, w * factor]
                }
                LayerKind::ConcatSkip { from } => {
                    let src = *index
                        .get(from.as_str())
                        .filter(|&&j| j < i)
                        .ok_or_else(|| invalid(format!("skip source `{from}` is not an earlier layer")))?;
                    let (c, h, w) = spatial(prev, &layer.name)?;
                    let (sc, sh, sw) = spatial(&out_shapes[src], &layer.name)?;
                    if (sh, sw) != (h, w) {
                        return Err(Error::Shape {
                            layer: layer.name.clone(),
                            expected: vec![sc, h, w],
                            got: out_shapes[src].clone(),
                        });
                    }
                    skip = Some(src);
                    vec![c + sc, h, w]
                }
            };
            out_shapes.push(shape);
            skip_sources.push(skip);
        }
        let mut logit_end = layers.len();
        while logit_end > 1 && layers[logit_end - 1].kind == LayerKind::Sigmoid {
            logit_end -= 1;
        }
        Ok(Self {
            input_shape,
            layers,
            out_shapes,
            skip_sources,
            logit_end,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_shape(&self, index: usize) -> &[usize] {
        &self.out_shapes[index]
    }

    /// Shape of the value returned by [`Network::forward`].
    pub fn logit_shape(&self) -> &[usize] {
        &self.out_shapes[self.logit_end - 1]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn parametric_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.kind.is_parametric())
    }

    /// Name of the last `conv2d` layer.
    pub fn last_conv(&self) -> Option<&str> {
        self.layers
            .iter()
            .rev()
            .find(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
            .map(|l| l.name.as_str())
    }

    /// Randomization blocks ordered from the output toward the input.
    /// Layers without a block tag form a block named after the layer.
    pub fn blocks_top_down(&self) -> Vec<(String, Vec<String>)> {
        let mut blocks: Vec<(String, Vec<String>)> = Vec::new();
        for layer in self.layers.iter().rev().filter(|l| l.kind.is_parametric()) {
            let block = layer.block.clone().unwrap_or_else(|| layer.name.clone());
            match blocks.iter_mut().find(|(b, _)| *b == block) {
                Some((_, members)) => members.push(layer.name.clone()),
                None => blocks.push((block, vec![layer.name.clone()])),
            }
        }
        blocks
    }

    /// Fresh weights: truncated normal with He scale (std √(2/fan_in)), zero biases.
    pub fn init_weights(&self, seed: u64) -> WeightStore {
        let mut store = WeightStore::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((wshape, bshape)) = layer.kind.param_shapes() {
                let std = (2.0 / layer.kind.fan_in() as f32).sqrt();
                let layer_seed = seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
                let weight = init_truncated_normal(&wshape, layer_seed, std).expect("positive std");
                store.insert(
                    layer.name.clone(),
                    LayerParams {
                        weight,
                        bias: Tensor::zeros(&bshape),
                    },
                );
            }
        }
        store
    }

    /// All-zero weights for every parametric layer.
    pub fn zero_weights(&self) -> WeightStore {
        let mut store = WeightStore::new();
        for layer in self.parametric_layers() {
            let (w, b) = layer.kind.param_shapes().expect("parametric");
            store.insert(
                layer.name.clone(),
                LayerParams {
                    weight: Tensor::zeros(&w),
                    bias: Tensor::zeros(&b),
                },
            );
        }
        store
    }

    /// Checks that `weights` has an entry of the right shape for every parametric layer.
    pub fn check_weights(&self, weights: &WeightStore) -> Result<()> {
        for layer in self.parametric_layers() {
            let (w, b) = layer.kind.param_shapes().expect("parametric");
            let p = weights
                .get(&layer.name)
                .ok_or_else(|| Error::MissingWeights(layer.name.clone()))?;
            for (want, got) in [(&w, p.weight.shape()), (&b, p.bias.shape())] {
                if want.as_slice() != got {
                    return Err(Error::Shape {
                        layer: layer.name.clone(),
                        expected: want.clone(),
                        got: got.to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    fn params<'w>(&self, weights: &'w WeightStore, layer: &str) -> Result<&'w LayerParams> {
        weights
            .get(layer)
            .ok_or_else(|| Error::MissingWeights(layer.to_string()))
    }

    /// Evaluates the network up to the logit, recording a tape for backward passes.
    pub fn forward(&self, weights: &WeightStore, x: &Tensor) -> Result<(Tensor, Tape)> {
        if x.shape() != self.input_shape.as_slice() {
            let first = &self.layers[0].name;
            return Err(Error::Shape {
                layer: first.clone(),
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        self.check_weights(weights)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.logit_end);
        let mut argmax: Vec<Option<Vec<u32>>> = Vec::with_capacity(self.logit_end);
        for i in 0..self.logit_end {
            let layer = &self.layers[i];
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let in_shape = input.shape();
            let mut out = Tensor::zeros(&self.out_shapes[i]);
            let mut arg = None;
            match &layer.kind {
                LayerKind::Conv2d { .. } => {
                    let p = self.params(weights, &layer.name)?;
                    let g = self.conv_geom(i, in_shape);
                    ops::conv_forward(&g, input.data(), p.weight.data(), p.bias.data(), out.data_mut());
                }
                LayerKind::Relu => {
                    for (o, &v) in out.data_mut().iter_mut().zip(input.data()) {
                        *o = v.max(0.0);
                    }
                }
                LayerKind::Sigmoid => {
                    for (o, &v) in out.data_mut().iter_mut().zip(input.data()) {
                        *o = sigmoid(v);
                    }
                }
                LayerKind::MaxPool { .. } => {
                    let g = self.pool_geom(i, in_shape);
                    let mut idx = vec![0u32; out.len()];
                    ops::maxpool_forward(&g, input.data(), out.data_mut(), &mut idx);
                    arg = Some(idx);
                }
                LayerKind::AvgPool { .. } => {
                    let g = self.pool_geom(i, in_shape);
                    ops::avgpool_forward(&g, input.data(), out.data_mut());
                }
                LayerKind::GlobalAvgPool => {
                    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                    let inv = 1.0 / (h * w) as f32;
                    for (ch, o) in out.data_mut().iter_mut().enumerate().take(c) {
                        *o = input.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() * inv;
                    }
                }
                LayerKind::Dense { inputs, outputs: n } => {
                    let p = self.params(weights, &layer.name)?;
                    ops::dense_forward(*inputs, *n, input.data(), p.weight.data(), p.bias.data(), out.data_mut());
                }
                LayerKind::UpsampleNearest { factor } => {
                    ops::upsample_nearest_forward(
                        in_shape[0],
                        in_shape[1],
                        in_shape[2],
                        *factor,
                        input.data(),
                        out.data_mut(),
                    );
                }
                LayerKind::ConcatSkip { .. } => {
                    let src = &outputs[self.skip_sources[i].expect("validated skip")];
                    let n = input.len();
                    out.data_mut()[..n].copy_from_slice(input.data());
                    out.data_mut()[n..].copy_from_slice(src.data());
                }
            }
            outputs.push(out);
            argmax.push(arg);
        }
        let result = outputs.last().expect("layers").clone();
        Ok((
            result,
            Tape {
                input: x.clone(),
                outputs,
                argmax,
                fingerprint: weights.fingerprint(),
            },
        ))
    }

    /// Probability head: the logit passed through the trailing sigmoid.
    pub fn predict(&self, weights: &WeightStore, x: &Tensor) -> Result<Tensor> {
        let (logit, _) = self.forward(weights, x)?;
        Ok(logit.map(sigmoid))
    }

    fn conv_geom(&self, i: usize, in_shape: &[usize]) -> ConvGeom {
        match self.layers[i].kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => ConvGeom {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                in_h: in_shape[1],
                in_w: in_shape[2],
                out_h: self.out_shapes[i][1],
                out_w: self.out_shapes[i][2],
            },
            _ => unreachable!("conv_geom on non-conv layer"),
        }
    }

    fn pool_geom(&self, i: usize, in_shape: &[usize]) -> PoolGeom {
        let (size, stride) = match self.layers[i].kind {
            LayerKind::MaxPool { size, stride } | LayerKind::AvgPool { size, stride } => (size, stride),
            _ => unreachable!("pool_geom on non-pool layer"),
        };
        PoolGeom {
            channels: in_shape[0],
            size,
            stride,
            in_h: in_shape[1],
            in_w: in_shape[2],
            out_h: self.out_shapes[i][1],
            out_w: self.out_shapes[i][2],
        }
    }

    /// General backward pass seeded with `upstream` (gradient w.r.t. the logit).
    pub fn backward(
        &self,
        tape: &Tape,
        weights: &WeightStore,
        upstream: &Tensor,
        opts: BackwardOptions<'_>,
    ) -> Result<Gradients> {
        let fp = weights.fingerprint();
        if fp != tape.fingerprint {
            return Err(Error::TapeMismatch {
                tape: tape.fingerprint,
                weights: fp,
            });
        }
        if tape.outputs.len() != self.logit_end {
            return Err(Error::invalid("tape was not recorded by this network"));
        }
        if upstream.shape() != self.logit_shape() {
            return Err(Error::Shape {
                layer: self.layers[self.logit_end - 1].name.clone(),
                expected: self.logit_shape().to_vec(),
                got: upstream.shape().to_vec(),
            });
        }
        let capture_idx = match opts.capture {
            Some(name) => Some(
                self.layer_index(name)
                    .filter(|&i| i < self.logit_end)
                    .ok_or_else(|| Error::invalid(format!("no layer named `{name}` before the logit")))?,
            ),
            None => None,
        };
        let mut grad_w = opts.weight_grads.then(|| weights.zeros_like());
        let mut grads: Vec<Option<Tensor>> = vec![None; self.logit_end];
        grads[self.logit_end - 1] = Some(upstream.clone());
        let mut grad_input = Tensor::zeros(tape.input.shape());
        let mut captured = None;

        for i in (0..self.logit_end).rev() {
            let Some(g) = grads[i].take() else {
                if capture_idx == Some(i) {
                    captured = Some(Tensor::zeros(&self.out_shapes[i]));
                }
                continue;
            };
            if capture_idx == Some(i) {
                captured = Some(g.clone());
            }
            let layer = &self.layers[i];
            let input = if i == 0 { &tape.input } else { &tape.outputs[i - 1] };
            let in_shape = input.shape().to_vec();
            let mut gin = Tensor::zeros(&in_shape);
            match &layer.kind {
                LayerKind::Conv2d { .. } => {
                    let p = self.params(weights, &layer.name)?;
                    let geom = self.conv_geom(i, &in_shape);
                    ops::conv_backward_input(&geom, g.data(), p.weight.data(), gin.data_mut());
                    if let Some(gw) = grad_w.as_mut() {
                        let slot = gw.get_mut(&layer.name).expect("zeros_like layout");
                        let LayerParams { weight, bias } = slot;
                        ops::conv_backward_weights(&geom, input.data(), g.data(), weight.data_mut(), bias.data_mut());
                    }
                }
                LayerKind::Relu => {
                    let fwd = input.data();
                    match opts.relu_rule {
                        ReluRule::Standard => {
                            for ((d, &gv), &x) in gin.data_mut().iter_mut().zip(g.data()).zip(fwd) {
                                *d = if x > 0.0 { gv } else { 0.0 };
                            }
                        }
                        ReluRule::Guided => {
                            for ((d, &gv), &x) in gin.data_mut().iter_mut().zip(g.data()).zip(fwd) {
                                *d = if x > 0.0 && gv > 0.0 { gv } else { 0.0 };
                            }
                        }
                    }
                }
                LayerKind::Sigmoid => {
                    for ((d, &gv), &y) in gin.data_mut().iter_mut().zip(g.data()).zip(tape.outputs[i].data()) {
                        *d = gv * y * (1.0 - y);
                    }
                }
                LayerKind::MaxPool { .. } => {
                    let idx = tape.argmax[i].as_ref().expect("maxpool records argmax");
                    ops::maxpool_backward(g.data(), idx, gin.data_mut());
                }
                LayerKind::AvgPool { .. } => {
                    let geom = self.pool_geom(i, &in_shape);
                    ops::avgpool_backward(&geom, g.data(), gin.data_mut());
                }
                LayerKind::GlobalAvgPool => {
                    let (h, w) = (in_shape[1], in_shape[2]);
                    let inv = 1.0 / (h * w) as f32;
                    for (c, &gv) in g.data().iter().enumerate() {
                        gin.data_mut()[c * h * w..(c + 1) * h * w]
                            .iter_mut()
                            .for_each(|d| *d = gv * inv);
                    }
                }
                LayerKind::Dense { inputs, .. } => {
                    let p = self.params(weights, &layer.name)?;
                    ops::dense_backward_input(*inputs, g.data(), p.weight.data(), gin.data_mut());
                    if let Some(gw) = grad_w.as_mut() {
                        let slot = gw.get_mut(&layer.name).expect("zeros_like layout");
                        let LayerParams { weight, bias } = slot;
                        ops::dense_backward_weights(*inputs, input.data(), g.data(), weight.data_mut(), bias.data_mut());
                    }
                }
                LayerKind::UpsampleNearest { factor } => {
                    ops::upsample_nearest_backward(
                        in_shape[0],
                        in_shape[1],
                        in_shape[2],
                        *factor,
                        g.data(),
                        gin.data_mut(),
                    );
                }
                LayerKind::ConcatSkip { .. } => {
                    let n = gin.len();
                    gin.data_mut().copy_from_slice(&g.data()[..n]);
                    let src = self.skip_sources[i].expect("validated skip");
                    let skip_grad = Tensor::new(self.out_shapes[src].clone(), g.data()[n..].to_vec())?;
                    accumulate(&mut grads[src], skip_grad);
                }
            }
            if i == 0 {
                grad_input.add_scaled(&gin, 1.0);
            } else {
                accumulate(&mut grads[i - 1], gin);
            }
        }
        Ok(Gradients {
            input: grad_input,
            weights: grad_w,
            captured,
        })
    }

    /// Gradient of a scalar logit with respect to the input.
    pub fn backward_input(&self, tape: &Tape, weights: &WeightStore, relu_rule: ReluRule) -> Result<Tensor> {
        let upstream = Tensor::filled(self.logit_shape(), 1.0);
        let g = self.backward(
            tape,
            weights,
            &upstream,
            BackwardOptions {
                relu_rule,
                ..Default::default()
            },
        )?;
        Ok(g.input)
    }

    /// Weight gradients for a given upstream gradient on the logit
    /// (for BCE-with-logits this is `sigmoid(z) - y`).
    pub fn backward_weights(&self, tape: &Tape, weights: &WeightStore, upstream: &Tensor) -> Result<WeightStore> {
        let g = self.backward(
            tape,
            weights,
            upstream,
            BackwardOptions {
                weight_grads: true,
                ..Default::default()
            },
        )?;
        Ok(g.weights.expect("requested weight grads"))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_scaled(&g, 1.0),
        None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
