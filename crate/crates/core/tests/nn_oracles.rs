mod common;

use common::{fd_worst_error, gaussian, oracle_flops, with_random_biases};
use edgetune::nn::{evaluate, training_cost, Activation, CwrBank, DenseLayer, Network, Tensor2};
use edgetune::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Straight-line re-implementation of the forward pass.
fn naive_forward(net: &Network, x: &Tensor2) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    for layer in net.layers() {
        rows = rows
            .iter()
            .map(|v| {
                (0..layer.out_dim())
                    .map(|o| {
                        let mut z = layer.bias[o];
                        for (i, &vi) in v.iter().enumerate() {
                            z += vi * layer.weights.get(i, o);
                        }
                        match layer.activation {
                            Activation::Relu => z.max(0.0),
                            Activation::Identity => z,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    rows
}

#[test]
fn identity_layer_passes_input_through() {
    let head = DenseLayer::new(
        Tensor2::from_rows(&[vec![1.0]]).unwrap(),
        vec![0.0],
        Activation::Identity,
    )
    .unwrap();
    let net = Network::from_parts(vec![], head).unwrap();
    let out = net
        .forward(&Tensor2::from_rows(&[vec![3.0]]).unwrap(), false)
        .unwrap();
    assert_eq!(out.logits.data(), &[3.0]);
}

#[test]
fn forward_matches_naive_oracle() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(&[7, 11, 5, 4], &mut rng).unwrap();
        let x = gaussian(9, 7, &mut rng);
        let got = net.forward(&x, true).unwrap();
        let want = naive_forward(&net, &x);
        for (r, row) in want.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                assert!((got.logits.get(r, c) - v).abs() < 1e-12);
            }
        }
        let feats = got.feats.unwrap();
        assert_eq!(feats.len(), net.depth());
        assert_eq!(feats.last().unwrap(), &got.logits);
    }
}

#[test]
fn forward_flops_small_net() {
    let net = Network::new(&[4, 8, 3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let out = net.forward(&Tensor2::zeros(16, 4), false).unwrap();
    assert_eq!(out.flops.fwd_flops, 1792);
    assert!(matches!(
        net.forward(&Tensor2::zeros(2, 5), false),
        Err(Error::Shape(_))
    ));
}

#[test]
fn tiny_net_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let net = Network::new(&[3, 4, 2], &mut rng).unwrap();
    let net = with_random_biases(net, &mut rng);
    let x = gaussian(2, 3, &mut rng);
    assert!(fd_worst_error(&net, &x, &[0, 1], 1e-5) < 1e-4);
}

#[test]
fn gradients_match_finite_differences_over_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let dims: Vec<usize> = if seed % 2 == 0 {
            vec![5, 7, 6, 3]
        } else {
            vec![4, 6, 5, 5, 3]
        };
        let net = Network::new(&dims, &mut rng).unwrap();
        let net = with_random_biases(net, &mut rng);
        let x = gaussian(6, dims[0], &mut rng);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let worst = fd_worst_error(&net, &x, &y, 1e-5);
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn flop_counts_match_oracle_for_every_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for depth in 1..=6usize {
        let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..9)).collect();
        let mut net = Network::new(&dims, &mut rng).unwrap();
        let b = 5;
        let x = gaussian(b, dims[0], &mut rng);
        let y: Vec<usize> = (0..b).map(|i| i % dims[depth]).collect();
        for mask in 0u32..(1 << depth) {
            let frozen: Vec<bool> = (0..depth).map(|i| mask >> i & 1 == 1).collect();
            net.set_freeze_mask(&frozen);
            let counted = net.backward(&x, &y).unwrap().flops;
            let (fwd, act, wgt, mem) = oracle_flops(&net.shapes(), &frozen, b as u64);
            assert_eq!(counted.fwd_flops, fwd, "depth {depth} mask {frozen:?}");
            assert_eq!(counted.bwd_act_flops, act, "depth {depth} mask {frozen:?}");
            assert_eq!(counted.bwd_wgt_flops, wgt, "depth {depth} mask {frozen:?}");
            assert_eq!(
                counted.activation_mem_units, mem,
                "depth {depth} mask {frozen:?}"
            );
            assert_eq!(training_cost(&net.shapes(), &frozen, b), counted);
        }
    }
}

#[test]
fn reference_network_training_flops() {
    // 64-128-128-10 at batch 16: forward 827_392, weight grads 827_392,
    // input grads of the two upper layers 565_248
    let shapes = [(64, 128), (128, 128), (128, 10)];
    let r = training_cost(&shapes, &[false; 3], 16);
    assert_eq!(
        (r.fwd_flops, r.bwd_wgt_flops, r.bwd_act_flops),
        (827_392, 827_392, 565_248)
    );
    assert_eq!(r.training_flops(), 2_220_032);
}

#[test]
fn small_net_freeze_examples() {
    let shapes = [(4, 8), (8, 3)];
    let all = training_cost(&shapes, &[false, false], 16);
    assert_eq!(all.bwd_wgt_flops, all.fwd_flops);
    assert_eq!(all.bwd_act_flops, all.fwd_flops - 2 * 16 * 4 * 8);
    let first = training_cost(&shapes, &[true, false], 16);
    assert_eq!(all.bwd_wgt_flops - first.bwd_wgt_flops, 1024);
    assert_eq!(first.bwd_act_flops, 0);
}

#[test]
fn activation_memory_shrinks_as_prefix_grows() {
    let shapes = [(16, 32), (32, 32), (32, 24), (24, 8), (8, 4)];
    let mut last = u64::MAX;
    for p in 0..shapes.len() {
        let mask: Vec<bool> = (0..shapes.len()).map(|i| i < p).collect();
        let mem = training_cost(&shapes, &mask, 16).activation_mem_units;
        assert!(mem < last, "prefix {p}");
        last = mem;
    }
}

#[test]
fn sgd_step_and_freezing() {
    let w = |v: f64| {
        DenseLayer::new(
            Tensor2::from_rows(&[vec![v]]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()
    };
    let mut net = Network::from_parts(vec![w(2.0)], w(1.0)).unwrap();
    let grad = |g: f64| edgetune::nn::LayerGrad {
        weights: Tensor2::from_rows(&[vec![g]]).unwrap(),
        bias: vec![0.0],
    };
    let grads = edgetune::nn::Gradients {
        layers: vec![Some(grad(0.3)), Some(grad(0.5))],
    };
    net.layer_mut(0).frozen = true;
    net.sgd_step(&grads, 0.1);
    assert_eq!(net.head().weights.get(0, 0), 0.95);
    assert_eq!(net.layer(0).weights.get(0, 0).to_bits(), 2.0f64.to_bits());
}

#[test]
fn frozen_weights_stay_bit_identical_and_loss_drops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = Network::new(&[3, 4, 2], &mut rng).unwrap();
    let x = gaussian(8, 3, &mut rng);
    let y: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let before = net.loss(&x, &y).unwrap();
    let g = net.backward(&x, &y).unwrap().grads;
    net.sgd_step(&g, 0.05);
    assert!(net.loss(&x, &y).unwrap() < before);

    net.layer_mut(0).frozen = true;
    let snapshot = net.layer(0).clone();
    for _ in 0..50 {
        let g = net.backward(&x, &y).unwrap().grads;
        assert!(g.layers[0].is_none());
        net.sgd_step(&g, 0.05);
    }
    assert_eq!(net.layer(0), &snapshot);
}

#[test]
fn freezing_does_not_change_active_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(&[6, 8, 7, 5, 3], &mut rng).unwrap();
        let x = gaussian(5, 6, &mut rng);
        let y = vec![0, 1, 2, 1, 0];
        net.set_freeze_mask(&[true, false, true, false]);
        let skipped = net.backward(&x, &y).unwrap().grads;
        let full = net.backward_ignoring_freeze(&x, &y).unwrap().grads;
        for l in [1, 3] {
            let (a, b) = (
                skipped.layers[l].as_ref().unwrap(),
                full.layers[l].as_ref().unwrap(),
            );
            for (u, v) in a.weights.data().iter().zip(b.weights.data()) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let train = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut net = Network::new(&[5, 9, 4], &mut rng).unwrap();
        for _ in 0..30 {
            let x = gaussian(8, 5, &mut rng);
            let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..4)).collect();
            let g = net.backward(&x, &y).unwrap().grads;
            net.sgd_step(&g, 0.1);
        }
        net
    };
    let (a, b) = (train(), train());
    for (la, lb) in a.layers().zip(b.layers()) {
        assert!(la
            .weights
            .data()
            .iter()
            .zip(lb.weights.data())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn label_out_of_range_is_an_input_error() {
    let net = Network::new(&[2, 3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(
        net.backward(&Tensor2::zeros(1, 2), &[3]),
        Err(Error::Input(_))
    ));
}

#[test]
fn random_net_on_shuffled_labels_is_near_chance() {
    let mut total = 0.0;
    let seeds = 20;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let net = Network::new(&[8, 16, 10], &mut rng).unwrap();
        let x = gaussian(1000, 8, &mut rng);
        let mut y: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        rand::seq::SliceRandom::shuffle(y.as_mut_slice(), &mut rng);
        total += evaluate(&net, &CwrBank::new(), &x, &y).unwrap();
    }
    let mean = total / seeds as f64;
    assert!((mean - 0.1).abs() < 0.05, "mean accuracy {mean}");
}

/// Isotropic clusters, one per class, in `dims` dimensions.
fn clusters(
    means: &[(usize, Vec<f64>)],
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor2, Vec<usize>) {
    let dims = means[0].1.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..per_class {
        for (c, m) in means {
            data.extend(m.iter().map(|&v| v + rng.sample::<f64, _>(StandardNormal)));
            labels.push(*c);
        }
    }
    (Tensor2::from_vec(labels.len(), dims, data).unwrap(), labels)
}

fn train_scenario(
    net: &mut Network,
    bank: Option<&mut CwrBank>,
    classes: &[usize],
    x: &Tensor2,
    y: &[usize],
) {
    let mut bank = bank;
    for start in (0..4 * y.len()).step_by(16).map(|s| s % y.len()) {
        let idx: Vec<usize> = (start..(start + 16).min(y.len())).collect();
        let bx = x.select_rows(&idx);
        let by: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        if let Some(b) = bank.as_deref() {
            b.begin_round(net, classes);
        }
        let g = net.backward(&bx, &by).unwrap().grads;
        net.sgd_step(&g, 0.1);
        if let Some(b) = bank.as_deref_mut() {
            b.end_round(net, classes);
        }
    }
}

/// Two scenarios with disjoint classes; the feature layer is trained in the
/// first and frozen in the second, so only the head can forget.
#[test]
fn cwr_preserves_earlier_classes() {
    let seeds = 20;
    let (mut with_sum, mut without_sum) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<(usize, Vec<f64>)> = (0..4)
            .map(|c| {
                (
                    c,
                    (0..8)
                        .map(|_| 2.5 * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
            })
            .collect();
        let (x1, y1) = clusters(&means[..2], 200, &mut rng);
        let (x2, y2) = clusters(&means[2..], 200, &mut rng);
        let (t1, l1) = clusters(&means[..2], 100, &mut rng);
        let base = Network::new(&[8, 16, 4], &mut rng).unwrap();

        let mut plain = base.clone();
        train_scenario(&mut plain, None, &[0, 1], &x1, &y1);
        plain.layer_mut(0).frozen = true;
        train_scenario(&mut plain, None, &[2, 3], &x2, &y2);
        without_sum += evaluate(&plain, &CwrBank::new(), &t1, &l1).unwrap();

        let mut net = base;
        let mut bank = CwrBank::new();
        train_scenario(&mut net, Some(&mut bank), &[0, 1], &x1, &y1);
        net.layer_mut(0).frozen = true;
        train_scenario(&mut net, Some(&mut bank), &[2, 3], &x2, &y2);
        with_sum += evaluate(&net, &bank, &t1, &l1).unwrap();
    }
    let (with, without) = (with_sum / seeds as f64, without_sum / seeds as f64);
    assert!(with > without, "with cwr {with:.3}, without {without:.3}");
}

#[test]
fn cwr_bank_bookkeeping() {
    let mut net = Network::new(&[3, 4, 5], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut bank = CwrBank::new();
    bank.begin_round(&mut net, &[1, 3]);
    bank.end_round(&net, &[1, 3]);
    assert_eq!(bank.classes().collect::<Vec<_>>(), vec![1, 3]);
    bank.begin_round(&mut net, &[3, 4]);
    net.head_mut().bias[3] = 0.25;
    bank.end_round(&net, &[3, 4]);
    assert_eq!(bank.classes().collect::<Vec<_>>(), vec![1, 3, 4]);
    assert_eq!(
        (bank.seen_count(1), bank.seen_count(3), bank.seen_count(4)),
        (1, 2, 1)
    );
    assert_eq!(bank.row(3).unwrap().bias, 0.25);
}
