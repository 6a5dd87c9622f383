mod common;

use common::{freeze_stats, stationary_run, TOY_BATCH};
use edgetune::cka::cka;
use edgetune::nn::{training_cost, Network, Tensor2};
use edgetune::simfreeze::FreezeController;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .unwrap()
}

/// A net trained away from its reference, a controller over the reference,
/// and the CKA of each feature layer on the controller's probe.
fn drifted(seed: u64) -> (Network, FreezeController, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = Network::new(&[6, 10, 8, 3], &mut rng).unwrap();
    let mut net = reference.clone();
    for _ in 0..30 {
        let x = gaussian(16, 6, &mut rng);
        let y: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let g = net.backward(&x, &y).unwrap();
        net.sgd_step(&g.grads, 0.1);
    }
    let probe = gaussian(32, 6, &mut rng);
    let (cur, refr) = (
        net.forward(&probe, true).unwrap().feats.unwrap(),
        reference.forward(&probe, true).unwrap().feats.unwrap(),
    );
    let values = (0..2).map(|l| cka(&cur[l], &refr[l]).unwrap()).collect();
    let mut ctrl = FreezeController::new(&reference, 10, 0.01).unwrap();
    ctrl.set_probe(probe).unwrap();
    (net, ctrl, values)
}

#[test]
fn small_variation_freezes() {
    let (mut net, mut ctrl, v) = drifted(1);
    // history [0.90, 0.905, 0.906] scaled onto the measured value
    for (it, h) in [(10, 0.90), (20, 0.905)] {
        ctrl.track_mut(0)
            .variation_rate(v[0] * h / 0.906, it)
            .unwrap();
    }
    let out = ctrl.maybe_freeze(&mut net, 30).unwrap();
    assert_eq!(out.changed, vec![0]);
    assert!(net.layer(0).frozen && !net.layer(1).frozen);
    assert_eq!(out.cka_evaluations, 2);
    assert!(out.cka_flops > 0);
}

#[test]
fn first_measurement_never_freezes() {
    let (mut net, mut ctrl, _) = drifted(2);
    assert!(ctrl.maybe_freeze(&mut net, 10).unwrap().changed.is_empty());
}

#[test]
fn all_frozen_costs_nothing() {
    let (mut net, mut ctrl, _) = drifted(3);
    net.set_freeze_mask(&[true, true, false]);
    let out = ctrl.maybe_freeze(&mut net, 10).unwrap();
    assert!(out.changed.is_empty() && out.cka_flops == 0 && out.cka_evaluations == 0);
}

#[test]
fn scenario_change_examples() {
    // prev 0.95 -> now 0.94 thaws, prev 0.95 -> now 0.9495 does not
    for (now, thaws) in [(0.94, true), (0.9495, false)] {
        let (mut net, mut ctrl, v) = drifted(4);
        net.set_freeze_mask(&[true, false, false]);
        ctrl.set_prev_scenario_cka(0, v[0] * 0.95 / now);
        let probe = ctrl.probe().unwrap().clone();
        let out = ctrl.on_scenario_change(&mut net, probe, 100).unwrap();
        assert_eq!(out.changed == vec![0], thaws, "now {now}");
        assert_eq!(net.layer(0).frozen, !thaws);
        assert_eq!(out.cka_evaluations, 1);
        assert!((ctrl.prev_scenario_cka(0).unwrap() - v[0]).abs() < 1e-12);
        if thaws {
            assert!(ctrl.track(0).history().is_empty());
        }
    }
}

#[test]
fn no_frozen_layers_means_empty_outcome() {
    let (mut net, mut ctrl, _) = drifted(5);
    let probe = ctrl.probe().unwrap().clone();
    assert_eq!(
        ctrl.on_scenario_change(&mut net, probe, 10).unwrap(),
        Default::default()
    );
    assert!(ctrl
        .on_scenario_change(&mut net, Tensor2::zeros(0, 6), 10)
        .is_err());
}

#[test]
fn stationary_toy_freezes_everything_then_costs_the_closed_form() {
    for seed in 0..20 {
        let run = stationary_run(seed);
        assert!(
            run.all_frozen_at.is_some(),
            "seed {seed} did not freeze within the limit"
        );
        assert!(run.monotone);
        let (x, y) = run.dataset.train_batch(0, 3);
        let pass = run.net.backward(&x, &y).unwrap();
        assert_eq!(
            pass.flops,
            training_cost(&run.net.shapes(), &[true, true, false], TOY_BATCH)
        );
    }
}

#[test]
fn rotation_thaws_in_most_runs() {
    let s = freeze_stats(0..100);
    assert_eq!(s.froze_in_time, 100);
    assert_eq!(s.monotone, 100);
    assert!(
        s.rotation_thawed >= 95,
        "rotation thawed a layer in {}/100 runs",
        s.rotation_thawed
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frozen_set_only_grows_within_a_scenario(seed in any::<u64>(), lr in 0.0f64..0.3, steps in 20usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(&[5, 8, 8, 3], &mut rng).unwrap();
        let mut ctrl = FreezeController::new(&net, 5, 0.02).unwrap();
        ctrl.set_probe(gaussian(12, 5, &mut rng)).unwrap();
        let mut frozen = vec![false; 2];
        for it in 1..=steps as u64 {
            let x = gaussian(8, 5, &mut rng);
            let y: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
            let g = net.backward(&x, &y).unwrap();
            net.sgd_step(&g.grads, lr);
            if it % 5 == 0 {
                ctrl.maybe_freeze(&mut net, it).unwrap();
            }
            for (l, was) in frozen.iter_mut().enumerate() {
                prop_assert!(net.layer(l).frozen || !*was);
                *was = net.layer(l).frozen;
            }
            prop_assert!(!net.head().frozen);
        }
    }
}
