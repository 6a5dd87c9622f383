use serde::{Deserialize, Serialize};

use super::nnls::nnls;

/// Validation-error model `e(t) = 1 / (β0·t + β1) + β2`, all `β ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Root-mean-square error of the fit in error space.
    pub fit_residual: f64,
}

/// Errors are floored here before linearisation; a perfect validation score
/// would otherwise need an infinite denominator.
pub const ERROR_FLOOR: f64 = 1e-3;

const GRID_STEP: f64 = 0.01;

impl CurveFit {
    pub fn predicted_error(&self, t: f64) -> f64 {
        1.0 / (self.beta0 * t + self.beta1) + self.beta2
    }

    pub fn predicted_accuracy(&self, t: f64) -> f64 {
        1.0 - self.predicted_error(t)
    }

    /// Fits `(iteration, accuracy)` points. Needs at least two points with
    /// distinct iterations; returns `None` otherwise.
    ///
    /// The floor `β2` is chosen from the grid `0, 0.01, …` below the smallest
    /// observed error and then polished by a golden-section search around the
    /// best grid value. For each `β2`, `(β0, β1)` come from non-negative least
    /// squares on `1 / (e − β2) ≈ β0·t + β1`.
    pub fn fit(points: &[(u64, f64)]) -> Option<CurveFit> {
        if points.len() < 2 || points.iter().all(|p| p.0 == points[0].0) {
            return None;
        }
        let ts: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
        let errs: Vec<f64> = points
            .iter()
            .map(|p| (1.0 - p.1).clamp(ERROR_FLOOR, 1.0))
            .collect();
        let min_err = errs.iter().copied().fold(f64::INFINITY, f64::min);

        let mut best: Option<CurveFit> = None;
        let mut k = 0u32;
        loop {
            let b2 = f64::from(k) / 100.0;
            if b2 >= min_err {
                break;
            }
            if let Some(c) = fit_with_floor(&ts, &errs, b2) {
                if best.is_none_or(|b| c.fit_residual < b.fit_residual) {
                    best = Some(c);
                }
            }
            k += 1;
        }
        let grid_best = best?;

        // golden-section polish of β2 inside the neighbouring grid cells
        let lo = (grid_best.beta2 - GRID_STEP).max(0.0);
        let hi = (grid_best.beta2 + GRID_STEP).min(min_err * (1.0 - 1e-9));
        let eval =
            |b2: f64| fit_with_floor(&ts, &errs, b2).map_or(f64::INFINITY, |c| c.fit_residual);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..80 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = eval(d);
            }
        }
        let polished = fit_with_floor(&ts, &errs, 0.5 * (a + b));
        match polished {
            Some(p) if p.fit_residual < grid_best.fit_residual => Some(p),
            _ => Some(grid_best),
        }
    }
}

fn fit_with_floor(ts: &[f64], errs: &[f64], beta2: f64) -> Option<CurveFit> {
    let a: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t, 1.0]).collect();
    let y: Vec<f64> = errs.iter().map(|&e| 1.0 / (e - beta2)).collect();
    if y.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return None;
    }
    let (x, _) = nnls(&a, &y);
    let mut fit = CurveFit {
        beta0: x[0],
        beta1: x[1],
        beta2,
        fit_residual: 0.0,
    };
    if ts.iter().any(|&t| fit.beta0 * t + fit.beta1 <= 0.0) {
        return None;
    }
    let sse: f64 = ts
        .iter()
        .zip(errs)
        .map(|(&t, &e)| (fit.predicted_error(t) - e).powi(2))
        .sum();
    fit.fit_residual = (sse / ts.len() as f64).sqrt();
    Some(fit)
}
