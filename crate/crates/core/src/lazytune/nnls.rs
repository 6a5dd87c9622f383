//! Non-negative least squares for small systems.
//!
//! Solves `min ‖A x − b‖₂ s.t. x ≥ 0` by visiting every passive set: for a
//! subset `P` of columns the unconstrained least-squares solution on `P` is
//! computed, and the best feasible one wins. Exact (up to the linear solves)
//! and cheap while the column count stays in single digits.

/// Column-count ceiling for the exhaustive search.
pub const MAX_COLS: usize = 8;

/// Returns `(x, residual_norm)`.
///
/// # Panics
///
/// If the system is empty, ragged, or wider than [`MAX_COLS`].
pub fn nnls(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    let n = a.first().map_or(0, Vec::len);
    assert!(!a.is_empty() && n > 0, "empty system");
    assert!(n <= MAX_COLS, "too many columns for exhaustive nnls");
    assert_eq!(a.len(), b.len(), "row count mismatch");
    assert!(a.iter().all(|r| r.len() == n), "ragged system");

    let residual = |x: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(row, bi)| {
                let r: f64 = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() - bi;
                r * r
            })
            .sum::<f64>()
            .sqrt()
    };

    let mut best = vec![0.0; n];
    let mut best_res = residual(&best);
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let Some(sol) = least_squares(a, b, &cols) else {
            continue;
        };
        if sol.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (&j, v) in cols.iter().zip(sol) {
            x[j] = v;
        }
        let res = residual(&x);
        if res < best_res {
            best_res = res;
            best = x;
        }
    }
    (best, best_res)
}

/// Least squares on a column subset via the normal equations.
fn least_squares(a: &[Vec<f64>], b: &[f64], cols: &[usize]) -> Option<Vec<f64>> {
    let k = cols.len();
    let mut m = vec![vec![0.0; k + 1]; k];
    for (row, &bi) in a.iter().zip(b) {
        for (p, &cp) in cols.iter().enumerate() {
            for (q, &cq) in cols.iter().enumerate() {
                m[p][q] += row[cp] * row[cq];
            }
            m[p][k] += row[cp] * bi;
        }
    }
    // Gaussian elimination with partial pivoting
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        let scale = m.iter().map(|r| r[c].abs()).fold(0.0, f64::max);
        if m[piv][c].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        m.swap(c, piv);
        for r in 0..k {
            if r != c {
                let f = m[r][c] / m[c][c];
                for j in c..=k {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    Some((0..k).map(|i| m[i][k] / m[i][i]).collect())
}
