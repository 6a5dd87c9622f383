//! Toy setups shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use edgetune::nn::{Network, Tensor2};
use edgetune::simfreeze::{FreezeController, DEFAULT_STABILITY_THRESHOLD};
use edgetune::workload::{
    generate_dataset, ArrivalProcess, Dataset, ScenarioKind, ScenarioSpec, Transform, WorkloadSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TOY_DIMS: [usize; 4] = [8, 16, 16, 4];
pub const TOY_LR: f64 = 0.01;
pub const TOY_INTERVAL: u64 = 50;
pub const TOY_BATCH: usize = 32;
pub const TOY_ITERATION_LIMIT: u64 = 5000;

/// Four stationary classes, then the same classes again under `angle_deg`.
pub fn toy_dataset(seed: u64, angle_deg: f64) -> Dataset {
    let scenario = |kind, angle_deg| ScenarioSpec {
        kind,
        classes: vec![0, 1, 2, 3],
        transform: Transform {
            angle_deg,
            shift: vec![],
        },
        train_batches: 100,
        inference_share: None,
    };
    let spec = WorkloadSpec {
        seed,
        dims: TOY_DIMS[0],
        batch_size: TOY_BATCH,
        separation: 5.0,
        noise_std: 1.0,
        test_per_scenario: 64,
        pretrain_scenarios: 1,
        scenarios: vec![
            scenario(ScenarioKind::NewClass, 0.0),
            scenario(ScenarioKind::NewPattern, angle_deg),
        ],
        train_arrival: ArrivalProcess::Poisson { rate: 1.0 },
        inference_arrival: ArrivalProcess::Poisson { rate: 1.0 },
        total_inferences: 0,
        inference_batch: 16,
    };
    generate_dataset(&spec).unwrap()
}

pub struct StationaryRun {
    pub net: Network,
    pub ctrl: FreezeController,
    pub dataset: Dataset,
    /// Iteration at which every feature layer was frozen.
    pub all_frozen_at: Option<u64>,
    /// No layer was ever thawed during the run.
    pub monotone: bool,
}

/// Trains the toy net on the first scenario with freeze checks until every
/// feature layer is frozen or the iteration limit is hit.
pub fn stationary_run(seed: u64) -> StationaryRun {
    let dataset = toy_dataset(seed, 90.0);
    let mut net = Network::new(&TOY_DIMS, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut ctrl = FreezeController::new(&net, TOY_INTERVAL, DEFAULT_STABILITY_THRESHOLD).unwrap();
    ctrl.set_probe(dataset.train_batch(0, 0).0).unwrap();
    let features = net.feature_depth();
    let mut frozen = vec![false; features];
    let mut monotone = true;
    let mut all_frozen_at = None;
    let batches = dataset.train_batch_count(0);
    for it in 1..=TOY_ITERATION_LIMIT {
        let (x, y) = dataset.train_batch(0, (it as usize - 1) % batches);
        let pass = net.backward(&x, &y).unwrap();
        net.sgd_step(&pass.grads, TOY_LR);
        if it % TOY_INTERVAL == 0 {
            ctrl.maybe_freeze(&mut net, it).unwrap();
        }
        for (l, was) in frozen.iter_mut().enumerate() {
            let now = net.layer(l).frozen;
            monotone &= now || !*was;
            *was = now;
        }
        if frozen.iter().all(|&f| f) {
            all_frozen_at = Some(it);
            break;
        }
    }
    StationaryRun {
        net,
        ctrl,
        dataset,
        all_frozen_at,
        monotone,
    }
}

/// Layers thawed when the scenario switches to a probe from `scenario`
/// (batch `batch` of its training pool).
pub fn thawed_after_switch(run: &StationaryRun, scenario: usize, batch: usize) -> Vec<usize> {
    let (mut net, mut ctrl) = (run.net.clone(), run.ctrl.clone());
    let probe = run.dataset.train_batch(scenario, batch).0;
    ctrl.on_scenario_change(
        &mut net,
        probe,
        run.all_frozen_at.unwrap_or(TOY_ITERATION_LIMIT),
    )
    .unwrap()
    .changed
}

pub struct FreezeStats {
    pub runs: usize,
    pub froze_in_time: usize,
    pub monotone: usize,
    pub same_distribution_clean: usize,
    pub rotation_thawed: usize,
}

pub fn freeze_stats(seeds: std::ops::Range<u64>) -> FreezeStats {
    let mut s = FreezeStats {
        runs: 0,
        froze_in_time: 0,
        monotone: 0,
        same_distribution_clean: 0,
        rotation_thawed: 0,
    };
    for seed in seeds {
        let run = stationary_run(seed);
        s.runs += 1;
        s.froze_in_time += usize::from(run.all_frozen_at.is_some());
        s.monotone += usize::from(run.monotone);
        // a later batch of the same scenario is an independent draw from the same distribution
        s.same_distribution_clean += usize::from(thawed_after_switch(&run, 0, 7).is_empty());
        s.rotation_thawed += usize::from(!thawed_after_switch(&run, 1, 0).is_empty());
    }
    s
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .unwrap()
}

pub fn fd_worst_error(net: &Network, x: &Tensor2, y: &[usize], h: f64) -> f64 {
    let bp = net.backward(x, y).unwrap();
    let mut worst: f64 = 0.0;
    let rel = |fd: f64, an: f64| (fd - an).abs() / (fd.abs().max(an.abs())).max(1e-6);
    for l in 0..net.depth() {
        let g = bp.grads.layers[l].as_ref().expect("every layer active");
        for k in 0..g.weights.data().len() {
            let (mut plus, mut minus) = (net.clone(), net.clone());
            plus.layer_mut(l).weights.data_mut()[k] += h;
            minus.layer_mut(l).weights.data_mut()[k] -= h;
            let fd = (plus.loss(x, y).unwrap() - minus.loss(x, y).unwrap()) / (2.0 * h);
            worst = worst.max(rel(fd, g.weights.data()[k]));
        }
        for k in 0..g.bias.len() {
            let (mut plus, mut minus) = (net.clone(), net.clone());
            plus.layer_mut(l).bias[k] += h;
            minus.layer_mut(l).bias[k] -= h;
            let fd = (plus.loss(x, y).unwrap() - minus.loss(x, y).unwrap()) / (2.0 * h);
            worst = worst.max(rel(fd, g.bias[k]));
        }
    }
    worst
}

/// Fresh networks have zero biases, which puts every pre-activation fed by
/// an all-dead layer exactly on the ReLU kink; move them off it.
pub fn with_random_biases(mut net: Network, rng: &mut ChaCha8Rng) -> Network {
    for l in 0..net.depth() {
        for b in net.layer_mut(l).bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    net
}

/// Counts the cost of one training iteration layer by layer: a layer does a
/// weight-gradient matmul when it is trainable, and an input-gradient matmul
/// when any layer below it is trainable.
pub fn oracle_flops(shapes: &[(usize, usize)], frozen: &[bool], b: u64) -> (u64, u64, u64, u64) {
    let (mut fwd, mut act, mut wgt, mut mem) = (0, 0, 0, 0);
    for (i, &(inp, out)) in shapes.iter().enumerate() {
        let mm = 2 * b * (inp * out) as u64;
        fwd += mm;
        if !frozen[i] {
            wgt += mm;
        }
        if frozen[..i].iter().any(|f| !f) {
            act += mm;
        }
        if frozen[..=i].iter().any(|f| !f) {
            mem += b * inp as u64;
        }
    }
    (fwd, act, wgt, mem)
}
