use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};

/// Built-in architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchId {
    /// Four 3×3 conv-ReLU-maxpool blocks (8→64 channels), global average pool, dense → 1.
    #[serde(rename = "ARCH_A")]
    ArchA,
    /// Three 5×5 conv-ReLU-avgpool blocks, dense → 16, ReLU, dense → 1.
    #[serde(rename = "ARCH_B")]
    ArchB,
    /// Three-level encoder-decoder with concatenated skips and a 1×1 head.
    #[serde(rename = "SEG")]
    Seg,
}

impl ArchId {
    pub fn name(self) -> &'static str {
        match self {
            ArchId::ArchA => "ARCH_A",
            ArchId::ArchB => "ARCH_B",
            ArchId::Seg => "SEG",
        }
    }

    pub fn is_classifier(self) -> bool {
        self != ArchId::Seg
    }

    /// Number of 2× downsamplings the input side must survive.
    fn depth(self) -> usize {
        match self {
            ArchId::ArchA => 4,
            ArchId::ArchB | ArchId::Seg => 3,
        }
    }

    /// Builds the network for a square `side × side` single-channel input.
    pub fn build(self, side: usize) -> Result<Network> {
        let step = 1 << self.depth();
        if side < step || side % step != 0 {
            return Err(Error::invalid(format!(
                "{} needs an input side divisible by {step}, got {side}",
                self.name()
            )));
        }
        let layers = match self {
            ArchId::ArchA => arch_a(),
            ArchId::ArchB => arch_b(side),
            ArchId::Seg => seg(),
        };
        Network::new(vec![1, side, side], layers)
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ARCH_A" => Ok(ArchId::ArchA),
            "ARCH_B" => Ok(ArchId::ArchB),
            "SEG" => Ok(ArchId::Seg),
            _ => Err(Error::invalid(format!("unknown architecture `{s}`"))),
        }
    }
}

fn conv_block(layers: &mut Vec<LayerSpec>, block: &str, cin: usize, cout: usize, kernel: usize, pool: LayerKind) {
    layers.push(LayerSpec::conv(&format!("{block}_conv"), cin, cout, kernel, kernel / 2).in_block(block));
    layers.push(LayerSpec::relu(&format!("{block}_relu")).in_block(block));
    layers.push(LayerSpec::new(format!("{block}_pool"), pool).in_block(block));
}

fn arch_a() -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let widths = [1, 8, 16, 32, 64];
    for b in 0..4 {
        conv_block(
            &mut layers,
            &format!("block{}", b + 1),
            widths[b],
            widths[b + 1],
            3,
            LayerKind::MaxPool { size: 2, stride: 2 },
        );
    }
    layers.push(LayerSpec::new("gap", LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::dense("logits", 64, 1).in_block("logits"));
    layers.push(LayerSpec::new("prob", LayerKind::Sigmoid));
    layers
}

fn arch_b(side: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let widths = [1, 6, 12, 24];
    for b in 0..3 {
        conv_block(
            &mut layers,
            &format!("block{}", b + 1),
            widths[b],
            widths[b + 1],
            5,
            LayerKind::AvgPool { size: 2, stride: 2 },
        );
    }
    let flat = 24 * (side / 8) * (side / 8);
    layers.push(LayerSpec::dense("fc1", flat, 16).in_block("fc1"));
    layers.push(LayerSpec::relu("fc1_relu").in_block("fc1"));
    layers.push(LayerSpec::dense("logits", 16, 1).in_block("logits"));
    layers.push(LayerSpec::new("prob", LayerKind::Sigmoid));
    layers
}

fn seg() -> Vec<LayerSpec> {
    let widths = [4, 8, 16];
    let mut layers = Vec::new();
    let mut cin = 1;
    for (i, &w) in widths.iter().enumerate() {
        let b = format!("enc{}", i + 1);
        layers.push(LayerSpec::conv(&format!("{b}_conv"), cin, w, 3, 1).in_block(&b));
        layers.push(LayerSpec::relu(&format!("{b}_relu")).in_block(&b));
        layers.push(LayerSpec::maxpool(&format!("{b}_pool"), 2).in_block(&b));
        cin = w;
    }
    for i in (0..3).rev() {
        let b = format!("dec{}", i + 1);
        let skip = widths[i];
        let out = if i == 0 { widths[0] } else { widths[i - 1] };
        layers.push(LayerSpec::new(format!("{b}_up"), LayerKind::UpsampleNearest { factor: 2 }).in_block(&b));
        layers.push(
            LayerSpec::new(
                format!("{b}_cat"),
                LayerKind::ConcatSkip {
                    from: format!("enc{}_relu", i + 1),
                },
            )
            .in_block(&b),
        );
        layers.push(LayerSpec::conv(&format!("{b}_conv"), cin + skip, out, 3, 1).in_block(&b));
        layers.push(LayerSpec::relu(&format!("{b}_relu")).in_block(&b));
        cin = out;
    }
    layers.push(LayerSpec::conv("logits", cin, 1, 1, 0).in_block("logits"));
    layers.push(LayerSpec::new("prob", LayerKind::Sigmoid));
    layers
}
