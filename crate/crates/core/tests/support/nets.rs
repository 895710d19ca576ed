//! Random small networks for gradient and attribution property checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saltrust::engine::{LayerKind, LayerSpec, Network, WeightStore};
use saltrust::models::ArchId;
use saltrust::Tensor;

pub const SIDE: usize = 8;

/// One of several small topologies on an 8×8 single-channel input, chosen by
/// `seed`, with He-scaled weights and small random biases.
pub fn random_net(seed: u64) -> (Network, WeightStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c1 = rng.random_range(2..5);
    let c2 = rng.random_range(2..5);
    let layers = match seed % 4 {
        0 => vec![
            LayerSpec::conv("c1", 1, c1, 3, 1),
            LayerSpec::relu("r1"),
            LayerSpec::maxpool("p1", 2),
            LayerSpec::conv("c2", c1, c2, 3, 1),
            LayerSpec::relu("r2"),
            LayerSpec::new("gap", LayerKind::GlobalAvgPool),
            LayerSpec::dense("fc", c2, 1),
            LayerSpec::new("prob", LayerKind::Sigmoid),
        ],
        1 => vec![
            LayerSpec::new(
                "c1",
                LayerKind::Conv2d {
                    in_channels: 1,
                    out_channels: c1,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
            ),
            LayerSpec::relu("r1"),
            LayerSpec::conv("c2", c1, c2, 3, 1),
            LayerSpec::relu("r2"),
            LayerSpec::avgpool("p2", 2),
            LayerSpec::dense("fc", c2 * 4, 1),
        ],
        2 => vec![
            LayerSpec::conv("e1", 1, c1, 3, 1),
            LayerSpec::relu("e1r"),
            LayerSpec::maxpool("e1p", 2),
            LayerSpec::conv("e2", c1, c2, 3, 1),
            LayerSpec::relu("e2r"),
            LayerSpec::new("up", LayerKind::UpsampleNearest { factor: 2 }),
            LayerSpec::new("cat", LayerKind::ConcatSkip { from: "e1r".into() }),
            LayerSpec::conv("d1", c1 + c2, c1, 3, 1),
            LayerSpec::relu("d1r"),
            LayerSpec::conv("head", c1, 1, 1, 0),
        ],
        _ => vec![
            LayerSpec::conv("c1", 1, c1, 5, 2),
            LayerSpec::relu("r1"),
            LayerSpec::conv("c2", c1, c2, 3, 0),
            LayerSpec::relu("r2"),
            LayerSpec::maxpool("p2", 2),
            LayerSpec::dense("fc1", c2 * 9, 4),
            LayerSpec::new("sg", LayerKind::Sigmoid),
            LayerSpec::dense("fc2", 4, 1),
        ],
    };
    let net = Network::new(vec![1, SIDE, SIDE], layers).expect("valid random net");
    let mut weights = net.init_weights(seed.wrapping_mul(31).wrapping_add(7));
    for (_, p) in weights.iter_mut() {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    (net, weights)
}

pub fn random_image(seed: u64, side: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    Tensor::image(side, side, (0..side * side).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Upstream gradient: ones for scalar outputs, random for maps.
pub fn upstream_for(net: &Network, seed: u64) -> Tensor {
    let shape = net.logit_shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let n: usize = shape.iter().product();
    if n == 1 {
        Tensor::filled(&shape, 1.0)
    } else {
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }
}

/// Classifier architecture at 32×32 with He weights and random biases, so the
/// path from the zero baseline is genuinely nonlinear.
pub fn biased_classifier(seed: u64) -> (Network, WeightStore) {
    let arch = if seed % 2 == 0 { ArchId::ArchA } else { ArchId::ArchB };
    let net = arch.build(32).unwrap();
    let mut w = net.init_weights(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in w.iter_mut() {
        for b in p.bias.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    (net, w)
}
