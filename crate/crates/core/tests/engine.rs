mod support;

use proptest::prelude::*;
use saltrust::engine::{
    bce_logit_grad, bce_loss, BackwardOptions, LayerKind, LayerParams, LayerSpec, Network, ReluRule,
};
use saltrust::{Error, Tensor};
use support::nets::{random_image, random_net, upstream_for, SIDE};
use support::reference::{fd_input_grad, fd_weight_grad, rel_err, RefParams};

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

#[test]
fn identity_conv_reproduces_input() {
    let net = Network::new(vec![1, 5, 5], vec![LayerSpec::conv("id", 1, 1, 1, 0)]).unwrap();
    let mut w = net.zero_weights();
    w.get_mut("id").unwrap().weight.data_mut()[0] = 1.0;
    let x = random_image(3, 5);
    let (y, _) = net.forward(&w, &x).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn zero_weights_give_zero_output() {
    let net = Network::new(
        vec![1, 6, 6],
        vec![
            LayerSpec::conv("c", 1, 2, 3, 1),
            LayerSpec::avgpool("p", 2),
            LayerSpec::dense("fc", 18, 1),
        ],
    )
    .unwrap();
    let (y, _) = net.forward(&net.zero_weights(), &random_image(1, 6)).unwrap();
    assert_eq!(y.data(), &[0.0]);
}

#[test]
fn hand_convolution_of_ones() {
    let net = Network::new(vec![1, 2, 2], vec![LayerSpec::conv("c", 1, 1, 2, 0)]).unwrap();
    let mut w = net.zero_weights();
    w.get_mut("c").unwrap().weight.data_mut().fill(1.0);
    let x = Tensor::image(2, 2, vec![1.0; 4]).unwrap();
    let (y, _) = net.forward(&w, &x).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1]);
    assert_eq!(y.data(), &[4.0]);
}

#[test]
fn shape_mismatch_names_layer() {
    let net = Network::new(vec![1, 4, 4], vec![LayerSpec::conv("first", 1, 1, 3, 1)]).unwrap();
    let err = net.forward(&net.zero_weights(), &random_image(0, 5)).unwrap_err();
    assert!(err.to_string().contains("first"), "{err}");
    let err = Network::new(
        vec![1, 4, 4],
        vec![LayerSpec::conv("a", 1, 2, 3, 1), LayerSpec::dense("head", 7, 1)],
    )
    .unwrap_err();
    assert!(matches!(err, Error::Shape { ref layer, .. } if layer == "head"));
}

#[test]
fn construction_validates_hyperparameters() {
    let dup = Network::new(vec![1, 4, 4], vec![LayerSpec::relu("x"), LayerSpec::relu("x")]);
    assert!(dup.is_err());
    let big_kernel = Network::new(vec![1, 4, 4], vec![LayerSpec::conv("c", 1, 1, 7, 1)]);
    assert!(big_kernel.is_err());
    let zero_stride = Network::new(
        vec![1, 4, 4],
        vec![LayerSpec::new(
            "c",
            LayerKind::Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: 3,
                stride: 0,
                padding: 1,
            },
        )],
    );
    assert!(zero_stride.is_err());
    let forward_skip = Network::new(
        vec![1, 4, 4],
        vec![LayerSpec::new("cat", LayerKind::ConcatSkip { from: "later".into() }), LayerSpec::relu("later")],
    );
    assert!(forward_skip.is_err());
}

#[test]
fn linear_net_input_gradient_is_weight() {
    let net = Network::new(vec![1, 3, 3], vec![LayerSpec::dense("fc", 9, 1)]).unwrap();
    let mut w = net.zero_weights();
    let wv: Vec<f32> = (0..9).map(|i| i as f32 * 0.5 - 2.0).collect();
    w.get_mut("fc").unwrap().weight.data_mut().copy_from_slice(&wv);
    for seed in 0..3 {
        let (_, tape) = net.forward(&w, &random_image(seed, 3)).unwrap();
        for rule in [ReluRule::Standard, ReluRule::Guided] {
            assert_eq!(net.backward_input(&tape, &w, rule).unwrap().data(), wv.as_slice());
        }
    }
}

#[test]
fn tape_rejects_other_weights() {
    let (net, w) = random_net(0);
    let (_, tape) = net.forward(&w, &random_image(0, SIDE)).unwrap();
    let mut other = w.clone();
    other.scale(2.0);
    assert!(matches!(
        net.backward_input(&tape, &other, ReluRule::Standard),
        Err(Error::TapeMismatch { .. })
    ));
}

#[test]
fn input_gradients_match_finite_differences() {
    for seed in 0..20 {
        let (net, w) = random_net(seed);
        let x = random_image(seed, SIDE);
        let up = upstream_for(&net, seed);
        let (_, tape) = net.forward(&w, &x).unwrap();
        let g = net
            .backward(&tape, &w, &up, BackwardOptions::default())
            .unwrap()
            .input;
        let params = RefParams::from_store(&w);
        let fd = fd_input_grad(&net, &params, &to_f64(&x), &to_f64(&up), 1e-3);
        let err = rel_err(g.data(), &fd);
        assert!(err < 1e-4, "net {seed}: relative error {err:e}");
    }
}

#[test]
fn weight_gradients_match_finite_differences() {
    for seed in 0..20 {
        let (net, w) = random_net(seed);
        let x = random_image(seed + 100, SIDE);
        let up = upstream_for(&net, seed);
        let (_, tape) = net.forward(&w, &x).unwrap();
        let gw = net.backward_weights(&tape, &w, &up).unwrap();
        let mut params = RefParams::from_store(&w);
        for layer in net.parametric_layers() {
            let p = gw.get(&layer.name).unwrap();
            let analytic: Vec<f32> = p.weight.data().iter().chain(p.bias.data()).copied().collect();
            let fd = fd_weight_grad(&net, &mut params, &layer.name, &to_f64(&x), &to_f64(&up), 1e-3);
            let err = rel_err(&analytic, &fd);
            assert!(err < 1e-4, "net {seed} layer {}: relative error {err:e}", layer.name);
        }
    }
}

#[test]
fn single_dense_layer_weight_gradient_under_bce() {
    let net = Network::new(vec![1, 2, 2], vec![LayerSpec::dense("fc", 4, 1)]).unwrap();
    let mut w = net.zero_weights();
    w.get_mut("fc").unwrap().weight.data_mut().copy_from_slice(&[0.3, -0.2, 0.5, 0.1]);
    let x = Tensor::image(2, 2, vec![0.5, 1.0, -0.5, 2.0]).unwrap();
    let (z, tape) = net.forward(&w, &x).unwrap();
    let up = Tensor::scalar(bce_logit_grad(z.data()[0], 1));
    let g = net.backward_weights(&tape, &w, &up).unwrap();
    // d/dw of -log σ(w·x + b) by central differences in f64.
    let loss = |wv: &[f64], b: f64| {
        let zz: f64 = wv.iter().zip([0.5, 1.0, -0.5, 2.0]).map(|(a, c)| a * c).sum::<f64>() + b;
        bce_loss(&[1.0 / (1.0 + (-zz).exp())], &[1]).unwrap()
    };
    let base = [0.3f32, -0.2, 0.5, 0.1].map(|v| v as f64);
    let h = 1e-3;
    let mut fd = Vec::new();
    for i in 0..4 {
        let mut p = base;
        p[i] += h;
        let mut m = base;
        m[i] -= h;
        fd.push((loss(&p, 0.0) - loss(&m, 0.0)) / (2.0 * h));
    }
    fd.push((loss(&base, h) - loss(&base, -h)) / (2.0 * h));
    let p = g.get("fc").unwrap();
    let analytic: Vec<f32> = p.weight.data().iter().chain(p.bias.data()).copied().collect();
    let err = rel_err(&analytic, &fd);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn zero_learning_signal_gives_zero_weight_gradients() {
    let (net, w) = random_net(4);
    let (_, tape) = net.forward(&w, &random_image(4, SIDE)).unwrap();
    let g = net.backward_weights(&tape, &w, &Tensor::scalar(0.0)).unwrap();
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn duplicated_batch_entries_double_summed_gradient() {
    let (net, w) = random_net(8);
    let x = random_image(8, SIDE);
    let (z, tape) = net.forward(&w, &x).unwrap();
    let up = Tensor::scalar(bce_logit_grad(z.data()[0], 1));
    let single = net.backward_weights(&tape, &w, &up).unwrap();
    let mut summed = single.zeros_like();
    summed.add_scaled(&single, 1.0);
    summed.add_scaled(&single, 1.0);
    for ((_, a), (_, b)) in summed.iter().zip(single.iter()) {
        for (x2, x1) in a.weight.data().iter().zip(b.weight.data()) {
            assert_eq!(*x2, 2.0 * x1);
        }
    }
}

#[test]
fn guided_rule_with_negative_incoming_gradient_is_zero() {
    // conv -> relu -> dense with all-negative head weights: every gradient
    // reaching the ReLU is negative.
    let net = Network::new(
        vec![1, 4, 4],
        vec![LayerSpec::conv("c", 1, 2, 3, 1), LayerSpec::relu("r"), LayerSpec::dense("fc", 32, 1)],
    )
    .unwrap();
    let mut w = net.init_weights(5);
    w.get_mut("fc").unwrap().weight.data_mut().iter_mut().for_each(|v| *v = -v.abs() - 0.01);
    w.get_mut("c").unwrap().bias.data_mut().fill(0.5);
    let (_, tape) = net.forward(&w, &random_image(5, 4)).unwrap();
    let g = net.backward_input(&tape, &w, ReluRule::Guided).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
    assert!(net.backward_input(&tape, &w, ReluRule::Standard).unwrap().max_abs() > 0.0);
}

#[test]
fn guided_equals_standard_when_all_gates_pass() {
    // Positive input, positive weights everywhere: every ReLU gate passes
    // under both rules.
    let net = Network::new(
        vec![1, 4, 4],
        vec![LayerSpec::conv("c", 1, 2, 3, 1), LayerSpec::relu("r"), LayerSpec::dense("fc", 32, 1)],
    )
    .unwrap();
    let mut w = net.init_weights(6);
    for (_, p) in w.iter_mut() {
        p.weight.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.01);
    }
    let (_, tape) = net.forward(&w, &random_image(6, 4)).unwrap();
    assert_eq!(
        net.backward_input(&tape, &w, ReluRule::Guided).unwrap(),
        net.backward_input(&tape, &w, ReluRule::Standard).unwrap()
    );
}

#[test]
fn capture_returns_layer_output_gradient() {
    let net = Network::new(
        vec![1, 4, 4],
        vec![
            LayerSpec::conv("c", 1, 1, 3, 1),
            LayerSpec::new("gap", LayerKind::GlobalAvgPool),
            LayerSpec::dense("fc", 1, 1),
        ],
    )
    .unwrap();
    let mut w = net.init_weights(1);
    w.insert(
        "fc",
        LayerParams {
            weight: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            bias: Tensor::scalar(0.0),
        },
    );
    let (_, tape) = net.forward(&w, &random_image(1, 4)).unwrap();
    let g = net
        .backward(
            &tape,
            &w,
            &Tensor::scalar(1.0),
            BackwardOptions {
                capture: Some("c"),
                ..Default::default()
            },
        )
        .unwrap();
    let cap = g.captured.unwrap();
    assert_eq!(cap.shape(), &[1, 4, 4]);
    assert!(cap.data().iter().all(|&v| (v - 2.0 / 16.0).abs() < 1e-7));
}

#[test]
fn forward_and_backward_are_bit_repeatable() {
    for seed in 0..4 {
        let (net, w) = random_net(seed);
        let x = random_image(seed, SIDE);
        let (a, ta) = net.forward(&w, &x).unwrap();
        let (b, tb) = net.forward(&w, &x).unwrap();
        assert_eq!(a, b);
        let up = upstream_for(&net, seed);
        let ga = net.backward(&ta, &w, &up, BackwardOptions::default()).unwrap();
        let gb = net.backward(&tb, &w, &up, BackwardOptions::default()).unwrap();
        let gc = net.backward(&ta, &w, &up, BackwardOptions::default()).unwrap();
        assert_eq!(ga.input, gb.input);
        assert_eq!(ga.input, gc.input);
    }
}

#[test]
fn blocks_run_top_down() {
    let net = Network::new(
        vec![1, 8, 8],
        vec![
            LayerSpec::conv("c1", 1, 2, 3, 1).in_block("block1"),
            LayerSpec::relu("r1").in_block("block1"),
            LayerSpec::conv("c2", 2, 2, 3, 1).in_block("block2"),
            LayerSpec::new("gap", LayerKind::GlobalAvgPool),
            LayerSpec::dense("fc", 2, 1).in_block("logits"),
        ],
    )
    .unwrap();
    let names: Vec<String> = net.blocks_top_down().into_iter().map(|(b, _)| b).collect();
    assert_eq!(names, ["logits", "block2", "block1"]);
    assert_eq!(net.last_conv(), Some("c2"));
}

#[test]
fn network_serde_round_trip() {
    let (net, _) = random_net(2);
    let json = serde_json::to_string(&net).unwrap();
    let back: Network = serde_json::from_str(&json).unwrap();
    assert_eq!(back, net);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_input_gradient_matches_reference(seed in 0u64..10_000) {
        let (net, w) = random_net(seed);
        let x = random_image(seed, SIDE);
        let up = upstream_for(&net, seed);
        let (_, tape) = net.forward(&w, &x).unwrap();
        let g = net.backward(&tape, &w, &up, BackwardOptions::default()).unwrap().input;
        let fd = fd_input_grad(&net, &RefParams::from_store(&w), &to_f64(&x), &to_f64(&up), 1e-3);
        let err = rel_err(g.data(), &fd);
        prop_assert!(err < 1e-4, "relative error {:e}", err);
    }

    #[test]
    fn prop_bce_nonnegative_zero_only_at_labels(p in 0.0f64..1.0, y in 0u8..2) {
        let l = bce_loss(&[p], &[y]).unwrap();
        prop_assert!(l >= 0.0);
        let at_label = bce_loss(&[y as f64], &[y]).unwrap();
        prop_assert!(at_label < 1e-6);
        if (p - y as f64).abs() > 1e-3 {
            prop_assert!(l > 1e-4);
        }
    }

    #[test]
    fn prop_guided_support_within_standard_single_relu(seed in 0u64..10_000) {
        let net = Network::new(
            vec![1, 4, 4],
            vec![LayerSpec::conv("c", 1, 3, 3, 1), LayerSpec::relu("r"), LayerSpec::dense("fc", 48, 1)],
        ).unwrap();
        let w = net.init_weights(seed);
        let (_, tape) = net.forward(&w, &random_image(seed, 4)).unwrap();
        // Compare gradients at the conv output: the guided pass never opens a
        // gate the standard pass keeps closed.
        let gw = net.backward(&tape, &w, &Tensor::scalar(1.0), BackwardOptions { relu_rule: ReluRule::Guided, capture: Some("c"), ..Default::default() }).unwrap().captured.unwrap();
        let sw = net.backward(&tape, &w, &Tensor::scalar(1.0), BackwardOptions { capture: Some("c"), ..Default::default() }).unwrap().captured.unwrap();
        for (g, s) in gw.data().iter().zip(sw.data()) {
            prop_assert!(*g == 0.0 || g == s);
        }
    }
}
