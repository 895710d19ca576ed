use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// Fully connected; flattens its input.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Sigmoid,
    UpsampleNearest {
        factor: usize,
    },
    /// Channel concatenation of the previous output with the output of layer `from`.
    ConcatSkip {
        from: String,
    },
}

impl LayerKind {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    /// Weight and bias shapes for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            LayerKind::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerKind::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::GlobalAvgPool => "globalavgpool",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::UpsampleNearest { .. } => "upsample-nearest",
            LayerKind::ConcatSkip { .. } => "concat-skip",
        }
    }
}

/// One named layer. `block` groups layers for cascading randomization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
            block: None,
        }
    }

    pub fn in_block(mut self, block: impl Into<String>) -> Self {
        self.block = Some(block.into());
        self
    }

    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride: 1,
                padding,
            },
        )
    }

    pub fn relu(name: &str) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn maxpool(name: &str, size: usize) -> Self {
        Self::new(name, LayerKind::MaxPool { size, stride: size })
    }

    pub fn avgpool(name: &str, size: usize) -> Self {
        Self::new(name, LayerKind::AvgPool { size, stride: size })
    }

    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        Self::new(name, LayerKind::Dense { inputs, outputs })
    }
}
