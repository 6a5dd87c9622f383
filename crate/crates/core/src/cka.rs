//! Linear centered kernel alignment and per-layer stability tracking.
//!
//! `cka(X, Y) = ‖Ycᵀ Xc‖²_F / (‖Xcᵀ Xc‖_F · ‖Ycᵀ Yc‖_F)` with `Xc`, `Yc`
//! column-centered. The three norms are evaluated through the sample Gram
//! matrices (`‖Ycᵀ Xc‖²_F = ⟨Xc Xcᵀ, Yc Ycᵀ⟩_F`), which keeps the work at
//! `O(n²·d)` for probe batches much smaller than the feature width.

use serde::{Deserialize, Serialize};

use crate::nn::Tensor2;
use crate::{Error, Result};

/// Activations of one layer on a probe batch, `samples × features`.
pub type FeatureMatrix = Tensor2;

/// Floor on the previous value when computing a relative change.
pub const VARIATION_EPS: f64 = 1e-6;

fn centered_gram(x: &FeatureMatrix) -> Result<Tensor2> {
    let mut c = x.clone();
    c.center_columns();
    c.matmul_t(&c)
}

fn frobenius_dot(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn cka(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::shape(format!(
            "{} samples vs {} samples",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::input("CKA needs at least two samples"));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::input("non-finite feature values"));
    }
    let kx = centered_gram(x)?;
    let ky = centered_gram(y)?;
    let xx = kx.frobenius_norm_sq().sqrt();
    let yy = ky.frobenius_norm_sq().sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate(
            "feature matrix is constant across samples".into(),
        ));
    }
    Ok(frobenius_dot(&kx, &ky) / (xx * yy))
}

/// Relative change of `new` against `prev`.
pub fn relative_change(prev: f64, new: f64) -> f64 {
    (new - prev).abs() / prev.max(VARIATION_EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaTrack {
    pub layer_id: usize,
    history: Vec<(u64, f64)>,
    last_variation: Option<f64>,
}

impl CkaTrack {
    pub fn new(layer_id: usize) -> Self {
        Self {
            layer_id,
            history: Vec::new(),
            last_variation: None,
        }
    }

    pub fn history(&self) -> &[(u64, f64)] {
        &self.history
    }

    pub fn last(&self) -> Option<f64> {
        self.history.last().map(|&(_, v)| v)
    }

    pub fn last_variation(&self) -> Option<f64> {
        self.last_variation
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.last_variation = None;
    }

    /// Appends a measurement and returns its relative change against the
    /// previous one, or `f64::INFINITY` on the first measurement.
    pub fn variation_rate(&mut self, new_cka: f64, iteration: u64) -> Result<f64> {
        if !(0.0..=1.0 + 1e-9).contains(&new_cka) {
            return Err(Error::input(format!("CKA value {new_cka} outside [0, 1]")));
        }
        if let Some(&(last_iter, _)) = self.history.last() {
            if iteration <= last_iter {
                return Err(Error::input(format!(
                    "iteration {iteration} does not follow {last_iter}"
                )));
            }
        }
        let rate = self
            .last()
            .map_or(f64::INFINITY, |prev| relative_change(prev, new_cka));
        self.history.push((iteration, new_cka));
        self.last_variation = rate.is_finite().then_some(rate);
        Ok(rate)
    }
}
