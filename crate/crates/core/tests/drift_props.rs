use edgetune::drift::{energy_score, DriftDetector, DriftMode, DriftParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const PRE_SHIFT: usize = 200;

fn params(window: usize, z: f64) -> DriftParams {
    DriftParams {
        window,
        z_threshold: z,
        ..DriftParams::default()
    }
}

/// Index of every firing on a stream of `PRE_SHIFT` N(0,1) scores followed by N(6,1).
fn firings(seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DriftDetector::new(params(8, 4.0)).unwrap();
    (0..PRE_SHIFT + 100)
        .filter(|&i| {
            let mean = if i < PRE_SHIFT { 0.0 } else { 6.0 };
            d.observe(mean + rng.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

#[test]
fn shift_detection_monte_carlo() {
    let runs: Vec<Vec<usize>> = (0..100).map(firings).collect();
    let quick = runs
        .iter()
        .filter(|f| f.iter().any(|&i| (PRE_SHIFT..PRE_SHIFT + 16).contains(&i)))
        .count();
    let clean = runs
        .iter()
        .filter(|f| f.iter().all(|&i| i >= PRE_SHIFT))
        .count();
    assert!(quick >= 95, "fired within 2 windows in {quick}/100 runs");
    assert!(
        clean >= 95,
        "no false fire before the shift in {clean}/100 runs"
    );
}

#[test]
fn refractory_after_start_and_firing() {
    let mut d = DriftDetector::new(params(4, 1.0)).unwrap();
    for s in [0.0, 0.1, -0.1, 0.05] {
        assert!(d.in_refractory());
        assert!(!d.observe(s));
    }
    assert!(!d.in_refractory());
    for s in [0.0, -0.05, 0.02, -0.02] {
        assert!(!d.observe(s));
    }
    let mut fired_at = None;
    for i in 0..10 {
        if d.observe(50.0) {
            fired_at = Some(i);
            break;
        }
    }
    assert!(fired_at.is_some());
    for _ in 0..4 {
        assert!(d.in_refractory());
        assert!(!d.observe(1e9));
    }
}

#[test]
fn oracle_mode_never_fires_on_scores() {
    let mut d = DriftDetector::new(DriftParams {
        mode: DriftMode::Oracle,
        ..DriftParams::default()
    })
    .unwrap();
    assert!((0..1000).all(|i| !d.observe(i as f64 * 100.0)));
    assert_eq!(d.fire_count(), 0);
}

#[test]
fn invalid_params() {
    assert!(DriftDetector::new(params(3, 4.0)).is_err());
    assert!(DriftDetector::new(params(8, 0.0)).is_err());
    assert!(DriftDetector::new(DriftParams {
        temperature: -1.0,
        ..DriftParams::default()
    })
    .is_err());
}

proptest! {
    #[test]
    fn energy_is_translation_covariant(logits in prop::collection::vec(-50.0f64..50.0, 1..12), c in -500.0f64..500.0, t in 0.1f64..5.0) {
        let shifted: Vec<f64> = logits.iter().map(|f| f + c).collect();
        let a = energy_score(&logits, t).unwrap();
        let b = energy_score(&shifted, t).unwrap();
        prop_assert!((b - (a - c)).abs() < 1e-9);
    }

    #[test]
    fn energy_bounded_by_max_logit(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = energy_score(&logits, 1.0).unwrap();
        prop_assert!(e <= -m + 1e-12);
        prop_assert!(e >= -m - (logits.len() as f64).ln() - 1e-12);
    }

    #[test]
    fn never_fires_while_refractory(scores in prop::collection::vec(-100.0f64..100.0, 1..300), window in 4usize..20, z in 0.1f64..6.0) {
        let mut d = DriftDetector::new(params(window, z)).unwrap();
        for s in scores {
            let refractory = d.in_refractory();
            let fired = d.observe(s);
            prop_assert!(!(refractory && fired));
        }
    }
}
