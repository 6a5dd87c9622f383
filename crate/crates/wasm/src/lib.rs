//! Browser demo bindings. Every export returns a JSON string.

use edgetune::cka::cka;
use edgetune::drift::{DriftDetector, DriftMode, DriftParams};
use edgetune::harness::{run, Policy, RunConfig};
use edgetune::nn::Tensor2;
use edgetune::selftest::tiny_workload;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let mut t = Tensor2::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            t.set(r, c, rng.sample(StandardNormal));
        }
    }
    t
}

#[derive(Serialize)]
struct CkaPoint {
    noise: f64,
    cka: f64,
}

/// CKA between a random feature matrix and a noisy copy, one point per level.
#[wasm_bindgen]
pub fn cka_under_noise(
    seed: u64,
    samples: usize,
    dims: usize,
    levels: Vec<f64>,
) -> Result<String, JsValue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(samples.max(2), dims.max(1), &mut rng);
    let mut points = Vec::with_capacity(levels.len());
    for noise in levels {
        let mut y = gaussian(x.rows(), x.cols(), &mut rng);
        y.scale(noise);
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                y.set(r, c, y.get(r, c) + x.get(r, c));
            }
        }
        points.push(CkaPoint {
            noise,
            cka: cka(&x, &y).map_err(js_err)?,
        });
    }
    to_js(&points)
}

#[derive(Serialize)]
struct DriftTrace {
    scores: Vec<f64>,
    fired_at: Vec<usize>,
}

/// Feeds `before` N(0,1) scores then `after` N(shift,1) scores to the detector.
#[wasm_bindgen]
pub fn drift_stream(
    seed: u64,
    before: usize,
    after: usize,
    shift: f64,
    window: usize,
    z: f64,
) -> Result<String, JsValue> {
    let mut det = DriftDetector::new(DriftParams {
        window,
        z_threshold: z,
        mode: DriftMode::Energy,
        ..DriftParams::default()
    })
    .map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = DriftTrace {
        scores: Vec::with_capacity(before + after),
        fired_at: vec![],
    };
    for i in 0..before + after {
        let base = if i < before { 0.0 } else { shift };
        let s = base + rng.sample::<f64, _>(StandardNormal);
        trace.scores.push(s);
        if det.observe(s) {
            trace.fired_at.push(i);
        }
    }
    to_js(&trace)
}

#[derive(Serialize)]
struct PolicyRow {
    policy: String,
    accuracy: f64,
    rounds: u64,
    time_s: f64,
    energy_j: f64,
    batches_needed: Vec<(f64, f64)>,
}

/// Runs the small three-scenario workload under each listed policy.
#[wasm_bindgen]
pub fn tiny_compare(seed: u64, policies: &str) -> Result<String, JsValue> {
    let mut rows = vec![];
    // one run at a time: the threaded comparison is unavailable in the browser
    for policy in Policy::parse_list(policies).map_err(js_err)? {
        let mut cfg = RunConfig::benchmark(seed, policy);
        cfg.workload = tiny_workload(seed);
        cfg.hidden = vec![16, 16];
        cfg.freeze.freeze_interval = 8;
        let r = run(&cfg).map_err(js_err)?;
        rows.push(PolicyRow {
            policy: policy.to_string(),
            accuracy: r.avg_inference_accuracy,
            rounds: r.round_count,
            time_s: r.total_time,
            energy_j: r.total_energy,
            batches_needed: r
                .batches_needed_timeline
                .iter()
                .map(|p| (p.time, p.batches_needed))
                .collect(),
        });
    }
    to_js(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cka_falls_with_noise() {
        let v: serde_json::Value =
            serde_json::from_str(&cka_under_noise(1, 64, 8, vec![0.0, 0.5, 4.0]).unwrap()).unwrap();
        let c: Vec<f64> = v
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["cka"].as_f64().unwrap())
            .collect();
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert!(c[0] > c[1] && c[1] > c[2]);
    }

    #[test]
    fn drift_fires_after_the_step() {
        let v: serde_json::Value =
            serde_json::from_str(&drift_stream(2, 200, 40, 6.0, 8, 4.0).unwrap()).unwrap();
        let fired: Vec<u64> = v["fired_at"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_u64().unwrap())
            .collect();
        assert_eq!(v["scores"].as_array().unwrap().len(), 240);
        assert!(fired.iter().any(|&i| (200..216).contains(&i)), "{fired:?}");
    }

    #[test]
    fn tiny_compare_returns_one_row_per_policy() {
        let v: serde_json::Value =
            serde_json::from_str(&tiny_compare(3, "immediate,etuner").unwrap()).unwrap();
        let rows = v.as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1]["rounds"].as_u64() <= rows[0]["rounds"].as_u64());
    }
}
