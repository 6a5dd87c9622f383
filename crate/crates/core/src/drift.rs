//! Scenario-change detection from energy scores of inference inputs.
//!
//! In-distribution inputs score lower energy than inputs from a shifted
//! distribution. The detector keeps a baseline of past scores and fires when
//! the mean of the most recent `window` scores rises above
//! `baseline_mean + z_threshold · baseline_std`, where `baseline_std` is the
//! standard error of the difference between a `window`-sample mean and the
//! baseline mean: `σ · √(1/window + 1/n)` for per-score deviation `σ` over
//! `n` baseline scores.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `E(x) = −T · log Σᵢ exp(fᵢ(x) / T)`, evaluated with max-subtraction.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::input("energy score of empty logits"));
    }
    if !(temperature > 0.0) {
        return Err(Error::input("temperature must be positive"));
    }
    let scaled = logits.iter().map(|f| f / temperature);
    let m = scaled.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.map(|s| (s - m).exp()).sum();
    Ok(-temperature * (m + sum.ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Detect from energy scores.
    Energy,
    /// Bypass: the workload's labelled boundaries are taken as detections.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftParams {
    pub temperature: f64,
    pub window: usize,
    pub z_threshold: f64,
    pub mode: DriftMode,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            window: 16,
            z_threshold: 4.0,
            mode: DriftMode::Energy,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config("drift temperature must be positive"));
        }
        if self.window < 4 {
            return Err(Error::config("drift window must be at least 4"));
        }
        if !(self.z_threshold > 0.0) {
            return Err(Error::config("drift z_threshold must be positive"));
        }
        Ok(())
    }
}

/// Welford running mean/variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDetector {
    params: DriftParams,
    recent: VecDeque<f64>,
    baseline: Running,
    /// Observations left before firing is allowed again.
    refractory: usize,
    fired: u64,
}

impl DriftDetector {
    pub fn new(params: DriftParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            recent: VecDeque::with_capacity(params.window + 1),
            baseline: Running::default(),
            refractory: params.window,
            fired: 0,
        })
    }

    pub fn params(&self) -> &DriftParams {
        &self.params
    }

    pub fn mode(&self) -> DriftMode {
        self.params.mode
    }

    pub fn fire_count(&self) -> u64 {
        self.fired
    }

    pub fn in_refractory(&self) -> bool {
        self.refractory > 0
    }

    pub fn baseline_mean(&self) -> f64 {
        self.baseline.mean
    }

    /// Standard deviation of single baseline scores.
    pub fn score_std(&self) -> f64 {
        self.baseline.std()
    }

    /// Standard error of `window mean − baseline mean` under the baseline.
    pub fn baseline_std(&self) -> f64 {
        self.standard_error(self.params.window)
    }

    fn standard_error(&self, window_len: usize) -> f64 {
        if self.baseline.n == 0 || window_len == 0 {
            return 0.0;
        }
        self.baseline.std() * (1.0 / window_len as f64 + 1.0 / self.baseline.n as f64).sqrt()
    }

    /// Feeds one score; returns `true` when a change is detected. Always
    /// `false` in oracle mode.
    ///
    /// Right after construction and after every firing the detector spends
    /// `window` observations rebuilding its baseline and cannot fire; testing
    /// starts once the recent window is full again. Scores
    /// enter the baseline only once: during the refractory period directly,
    /// afterwards when they leave the recent window.
    pub fn observe(&mut self, score: f64) -> bool {
        if self.params.mode == DriftMode::Oracle || !score.is_finite() {
            return false;
        }
        let w = self.params.window;
        if self.refractory > 0 {
            self.refractory -= 1;
            self.baseline.push(score);
            return false;
        }
        self.recent.push_back(score);
        if self.recent.len() > w {
            if let Some(old) = self.recent.pop_front() {
                self.baseline.push(old);
            }
        }
        if self.recent.len() < w {
            return false;
        }
        let window_mean = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        let spread = self
            .standard_error(self.recent.len())
            .max(1e-9 * (1.0 + self.baseline.mean.abs()));
        if window_mean > self.baseline.mean + self.params.z_threshold * spread {
            self.fired += 1;
            self.baseline = Running::default();
            self.recent.clear();
            self.refractory = w;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        assert!((energy_score(&[0.0, 0.0], 1.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(energy_score(&[3.5], 1.0).unwrap(), -3.5);
        let e = energy_score(&[1000.0, 0.0], 1.0).unwrap();
        assert!((e - (-1000.0 - (-1000f64).exp().ln_1p())).abs() < 1e-9);
        assert!(energy_score(&[], 1.0).is_err());
        assert!(energy_score(&[1.0], 0.0).is_err());
    }

    #[test]
    fn constant_stream_never_fires() {
        let mut d = DriftDetector::new(DriftParams::default()).unwrap();
        assert!((0..10_000).all(|_| !d.observe(-2.0)));
    }

    #[test]
    fn oracle_mode_ignores_scores() {
        let mut d = DriftDetector::new(DriftParams {
            mode: DriftMode::Oracle,
            ..Default::default()
        })
        .unwrap();
        assert!((0..100).all(|i| !d.observe(f64::from(i) * 100.0)));
    }

    #[test]
    fn step_fires_then_goes_quiet() {
        let p = DriftParams {
            window: 8,
            z_threshold: 4.0,
            ..Default::default()
        };
        let mut d = DriftDetector::new(p).unwrap();
        let low = [-0.3, 0.2, -0.1, 0.4, -0.5, 0.1, 0.0, 0.3, -0.2, 0.25];
        for i in 0..100 {
            assert!(!d.observe(low[i % low.len()]));
        }
        let fired_at = (0..16).position(|i| d.observe(6.0 + low[i % low.len()]));
        assert!(fired_at.is_some());
        assert!(d.in_refractory());
        for i in 0..8 {
            assert!(!d.observe(100.0 * f64::from(i)));
        }
    }

    #[test]
    fn params_are_validated() {
        assert!(DriftDetector::new(DriftParams {
            window: 3,
            ..Default::default()
        })
        .is_err());
        assert!(DriftDetector::new(DriftParams {
            z_threshold: 0.0,
            ..Default::default()
        })
        .is_err());
    }
}
