//! Lazy fine-tuning: decides when the accumulated training batches justify
//! paying for another fine-tuning round.
//!
//! `batches_needed` starts at one batch (immediate fine-tuning). After every
//! round it is re-estimated from an accuracy curve fitted to the scenario's
//! `(iteration, validation accuracy)` history so the next round can match
//! the gain of the last one. Each completed inference request shrinks it
//! logarithmically, and a scenario change resets it.

mod curve;
pub mod nnls;

pub use curve::{CurveFit, ERROR_FLOOR};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_CAP: u32 = 64;

/// Outcome of a `batches_needed` estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimate {
    FromCurve(f64),
    /// No curve was available; carries the unchanged current value.
    NoCurve(f64),
}

impl Estimate {
    pub fn value(self) -> f64 {
        match self {
            Estimate::FromCurve(v) | Estimate::NoCurve(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    batches_needed: f64,
    pub batches_ava: u64,
    /// `(iterations since scenario start, validation accuracy)`.
    history: Vec<(u64, f64)>,
    curve: Option<CurveFit>,
    cap: u32,
    iterations: u64,
}

impl TunerState {
    pub fn new(cap: u32) -> Result<Self> {
        if cap == 0 {
            return Err(Error::config("batches_needed cap must be at least 1"));
        }
        Ok(Self {
            batches_needed: 1.0,
            batches_ava: 0,
            history: Vec::new(),
            curve: None,
            cap,
            iterations: 0,
        })
    }

    pub fn batches_needed(&self) -> f64 {
        self.batches_needed
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn history(&self) -> &[(u64, f64)] {
        &self.history
    }

    pub fn curve(&self) -> Option<&CurveFit> {
        self.curve.as_ref()
    }

    /// Overrides the threshold, clamped to `[1, cap]`.
    pub fn set_batches_needed(&mut self, d: f64) {
        self.batches_needed = d.clamp(1.0, f64::from(self.cap));
    }

    pub fn should_trigger(&self) -> bool {
        self.batches_ava as f64 >= self.batches_needed.ceil()
    }

    /// Appends the round's validation point and refits once three points are
    /// available.
    pub fn record_round(&mut self, iterations_this_round: u64, val_accuracy: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&val_accuracy) {
            return Err(Error::input(format!(
                "validation accuracy {val_accuracy} outside [0, 1]"
            )));
        }
        self.iterations += iterations_this_round.max(1);
        self.history.push((self.iterations, val_accuracy));
        if self.history.len() >= 3 {
            self.curve = CurveFit::fit(&self.history);
        }
        Ok(())
    }

    /// Smallest batch count whose predicted accuracy gain reaches `last_gain`,
    /// clamped to `[1, cap]`.
    pub fn estimate_batches_needed(&self, last_gain: f64, iters_per_batch: u64) -> Estimate {
        match &self.curve {
            None => Estimate::NoCurve(self.batches_needed),
            Some(c) => Estimate::FromCurve(smallest_batches_for_gain(
                c,
                self.iterations as f64,
                last_gain,
                iters_per_batch.max(1) as f64,
                self.cap,
            )),
        }
    }

    /// Records a finished round and, when a curve is available, re-estimates
    /// `batches_needed` to reproduce the round's accuracy gain.
    pub fn finish_round(
        &mut self,
        iterations: u64,
        val_accuracy: f64,
        iters_per_batch: u64,
    ) -> Result<Estimate> {
        let prev = self.history.last().map(|p| p.1);
        self.record_round(iterations, val_accuracy)?;
        let est = match prev {
            Some(p) => self.estimate_batches_needed(val_accuracy - p, iters_per_batch),
            None => Estimate::NoCurve(self.batches_needed),
        };
        if let Estimate::FromCurve(v) = est {
            self.set_batches_needed(v);
        }
        Ok(est)
    }

    /// Logarithmic decrement applied after each completed inference request.
    pub fn on_inference(&mut self) {
        let d = self.batches_needed;
        self.batches_needed = if d > std::f64::consts::E {
            (d * (1.0 - 1.0 / d.ln())).max(1.0)
        } else {
            1.0
        };
    }

    pub fn on_scenario_change(&mut self) {
        self.batches_needed = 1.0;
        self.history.clear();
        self.curve = None;
        self.iterations = 0;
    }
}

/// Predicted accuracy gain of `n` further batches from iteration `t`.
fn gain_of(c: &CurveFit, t: f64, n: u32, iters_per_batch: f64) -> f64 {
    c.predicted_accuracy(t + f64::from(n) * iters_per_batch) - c.predicted_accuracy(t)
}

/// Inverts the curve for the required extra iterations, then nudges the
/// integer candidate so it is the smallest count satisfying the gain test.
fn smallest_batches_for_gain(
    c: &CurveFit,
    t: f64,
    gain: f64,
    iters_per_batch: f64,
    cap: u32,
) -> f64 {
    let reaches = |n: u32| gain_of(c, t, n, iters_per_batch) >= gain;
    if reaches(1) {
        return 1.0;
    }
    let u0 = 1.0 / (c.beta0 * t + c.beta1);
    let slack = u0 - gain;
    let mut n = if c.beta0 > 0.0 && slack > 0.0 {
        let x = ((1.0 / slack - c.beta1) / c.beta0 - t) / iters_per_batch;
        if x.is_finite() {
            x.ceil().clamp(1.0, f64::from(cap)) as u32
        } else {
            cap
        }
    } else {
        cap
    };
    while n > 1 && reaches(n - 1) {
        n -= 1;
    }
    while n < cap && !reaches(n) {
        n += 1;
    }
    f64::from(n)
}
