//! Fast invariant suite behind the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cka::cka;
use crate::costmodel::{calibrate_defaults, reference_round_flops, CostLedger, RoundUsage};
use crate::drift::{DriftDetector, DriftParams};
use crate::harness::{run, Policy, RunConfig};
use crate::lazytune::{CurveFit, TunerState};
use crate::nn::{training_cost, Network, Tensor2};
use crate::workload::{ArrivalProcess, ScenarioKind, ScenarioSpec, Transform, WorkloadSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
    .expect("finite samples")
}

fn cka_invariants() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs = 500;
    for i in 0..pairs {
        let n = rng.random_range(3..20);
        let x = gaussian(n, rng.random_range(1..10), &mut rng);
        let y = gaussian(n, rng.random_range(1..10), &mut rng);
        let v = cka(&x, &y).map_err(|e| e.to_string())?;
        let sym = cka(&y, &x).map_err(|e| e.to_string())?;
        let own = cka(&x, &x).map_err(|e| e.to_string())?;
        let (mut xs, mut ys) = (x.clone(), y.clone());
        xs.scale(3.0);
        ys.scale(0.5);
        let scaled = cka(&xs, &ys).map_err(|e| e.to_string())?;
        if !(0.0..=1.0 + 1e-9).contains(&v)
            || (v - sym).abs() > 1e-12
            || (own - 1.0).abs() > 1e-9
            || (v - scaled).abs() > 1e-9
        {
            return Err(format!(
                "pair {i}: cka {v}, swapped {sym}, self {own}, scaled {scaled}"
            ));
        }
    }
    Ok(format!("{pairs} random pairs"))
}

fn gradient_check() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(&[5, 7, 6, 4], &mut rng).map_err(|e| e.to_string())?;
        let x = gaussian(6, 5, &mut rng);
        let y: Vec<usize> = (0..6).map(|i| i % 4).collect();
        let bp = net.backward(&x, &y).map_err(|e| e.to_string())?;
        for l in 0..net.depth() {
            let g = bp.grads.layers[l].as_ref().ok_or("missing gradient")?;
            for k in 0..g.weights.data().len() {
                let h = 1e-5;
                let mut plus = net.clone();
                plus.layer_mut(l).weights.data_mut()[k] += h;
                let mut minus = net.clone();
                minus.layer_mut(l).weights.data_mut()[k] -= h;
                let fd = (plus.loss(&x, &y).map_err(|e| e.to_string())?
                    - minus.loss(&x, &y).map_err(|e| e.to_string())?)
                    / (2.0 * h);
                let an = g.weights.data()[k];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
    }
    if worst < 1e-4 {
        Ok(format!("worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e}"))
    }
}

fn flop_closed_form() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [6, 9, 7, 5, 3];
    let mut net = Network::new(&dims, &mut rng).map_err(|e| e.to_string())?;
    let x = gaussian(4, 6, &mut rng);
    let y = vec![0, 1, 2, 0];
    let layers = net.depth();
    for mask in 0u32..(1 << layers) {
        let frozen: Vec<bool> = (0..layers).map(|i| mask >> i & 1 == 1).collect();
        net.set_freeze_mask(&frozen);
        let got = net.backward(&x, &y).map_err(|e| e.to_string())?.flops;
        let want = training_cost(&net.shapes(), &frozen, 4);
        if got != want {
            return Err(format!(
                "mask {frozen:?}: counted {got:?}, closed form {want:?}"
            ));
        }
    }
    Ok(format!("{} masks", 1 << layers))
}

fn lazytune_rules() -> Result<String, String> {
    let mut s = TunerState::new(64).map_err(|e| e.to_string())?;
    s.set_batches_needed(10.0);
    s.on_inference();
    if (s.batches_needed() - 5.65706).abs() > 1e-5 {
        return Err(format!("d=10 decremented to {}", s.batches_needed()));
    }
    s.set_batches_needed(40.0);
    s.on_scenario_change();
    if s.batches_needed() != 1.0 {
        return Err("reset did not return to 1".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2000 {
        match rng.random_range(0..3) {
            0 => s.on_inference(),
            1 => s.on_scenario_change(),
            _ => {
                let acc = rng.random_range(0.0..1.0);
                s.finish_round(rng.random_range(1..30), acc, 1)
                    .map_err(|e| e.to_string())?;
            }
        }
        if !(1.0..=64.0).contains(&s.batches_needed()) {
            return Err(format!(
                "batches_needed left [1, 64]: {}",
                s.batches_needed()
            ));
        }
    }
    let pts: Vec<(u64, f64)> = (1..=10u64)
        .map(|k| (50 * k, 1.0 - (1.0 / (0.02 * (50 * k) as f64 + 1.0) + 0.1)))
        .collect();
    let fit = CurveFit::fit(&pts).ok_or("curve fit failed")?;
    if (fit.beta0 - 0.02).abs() > 1e-3
        || (fit.beta1 - 1.0).abs() > 1e-3
        || (fit.beta2 - 0.1).abs() > 1e-3
    {
        return Err(format!("curve recovery off: {fit:?}"));
    }
    Ok("decrement, reset, bounds, curve recovery".into())
}

fn ledger_rules() -> Result<String, String> {
    let p = calibrate_defaults();
    let mut l = CostLedger::new(0);
    for _ in 0..7 {
        l.charge_round(
            &p,
            RoundUsage {
                flops: reference_round_flops(),
                ..Default::default()
            },
        );
    }
    let (ts, es) = l.totals.overhead_shares();
    let sums = l.recomputed_totals();
    if (ts - 0.58).abs() > 1e-9 || (es - 0.38).abs() > 1e-9 {
        return Err(format!("overhead shares {ts:.4} / {es:.4}"));
    }
    if (sums.time() - l.totals.time()).abs() > 1e-9 || sums.rounds != l.totals.rounds {
        return Err("totals differ from the sum of rounds".into());
    }
    Ok(format!("shares {ts:.2} / {es:.2}"))
}

fn drift_rules() -> Result<String, String> {
    let mut d = DriftDetector::new(DriftParams {
        window: 8,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..200 {
        if d.observe(rng.sample(StandardNormal)) {
            return Err(format!("false fire at {i}"));
        }
    }
    let fired = (0..16).any(|_| d.observe(6.0 + rng.sample::<f64, _>(StandardNormal)));
    if !fired {
        return Err("missed a 6σ step".into());
    }
    Ok("quiet before, fires after a step".into())
}

/// A three-scenario workload small enough to run in well under a second.
pub fn tiny_workload(seed: u64) -> WorkloadSpec {
    let scenario = |classes: Vec<usize>, angle: f64| ScenarioSpec {
        kind: if angle == 0.0 {
            ScenarioKind::NewClass
        } else {
            ScenarioKind::Mixed
        },
        classes,
        transform: Transform {
            angle_deg: angle,
            shift: vec![],
        },
        train_batches: 24,
        inference_share: None,
    };
    WorkloadSpec {
        seed,
        dims: 8,
        batch_size: 16,
        separation: 6.0,
        noise_std: 1.0,
        test_per_scenario: 64,
        pretrain_scenarios: 1,
        scenarios: vec![
            scenario(vec![0, 1], 0.0),
            scenario(vec![0, 1, 2], 0.0),
            scenario(vec![0, 1, 2, 3], 30.0),
        ],
        train_arrival: ArrivalProcess::Poisson { rate: 0.2 },
        inference_arrival: ArrivalProcess::Poisson { rate: 1.0 },
        total_inferences: 40,
        inference_batch: 16,
    }
}

fn end_to_end() -> Result<String, String> {
    let mut cfg = RunConfig::benchmark(4, Policy::ETuner);
    cfg.workload = tiny_workload(4);
    cfg.hidden = vec![16, 16];
    cfg.freeze.freeze_interval = 8;
    let a = run(&cfg).map_err(|e| e.to_string())?;
    let b = run(&cfg).map_err(|e| e.to_string())?;
    let ja = a.to_json().map_err(|e| e.to_string())?;
    if ja != b.to_json().map_err(|e| e.to_string())? {
        return Err("two identical runs produced different reports".into());
    }
    let back = crate::harness::RunReport::from_json(&ja).map_err(|e| e.to_string())?;
    if back.to_json().map_err(|e| e.to_string())? != ja {
        return Err("report JSON does not round-trip".into());
    }
    let mean = a.requests.iter().map(|r| r.accuracy).sum::<f64>() / a.requests.len() as f64;
    if (mean - a.avg_inference_accuracy).abs() > 1e-12 {
        return Err(format!(
            "average {} vs recomputed {mean}",
            a.avg_inference_accuracy
        ));
    }
    let imm = run(&RunConfig {
        policy: Policy::Immediate,
        ..cfg
    })
    .map_err(|e| e.to_string())?;
    if a.round_count > imm.round_count {
        return Err(format!(
            "etuner ran {} rounds, immediate {}",
            a.round_count, imm.round_count
        ));
    }
    Ok(format!(
        "{} requests, {} rounds",
        a.requests.len(),
        a.round_count
    ))
}

/// Runs every check; order is stable.
pub fn run_selftest() -> Vec<Check> {
    vec![
        check("cka invariants", cka_invariants()),
        check("gradient vs finite differences", gradient_check()),
        check("flop closed form", flop_closed_form()),
        check("lazytune rules", lazytune_rules()),
        check("cost ledger", ledger_rules()),
        check("drift detector", drift_rules()),
        check("end-to-end determinism", end_to_end()),
    ]
}
