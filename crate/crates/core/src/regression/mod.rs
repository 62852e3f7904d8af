//! Supervised learners used by the pipeline: least squares for conditional
//! moments and multinomial logit for propensity scores.

mod mnlogit;
mod ols;

pub use mnlogit::{fit_mnlogit, predict_proba, MnLogitOptions, MultinomialLogitModel};
pub use ols::{fit_ols, predict_ols, LinearModel};

use nalgebra::{DMatrix, DVector};

/// Relative pivot below which a column counts as collinear with the ones
/// before it: `L[j,j]^2 < PIVOT_TOL * A[j,j]`.
const PIVOT_TOL: f64 = 1e-10;

/// Cholesky solve of `a x = b` for symmetric `a`. On failure returns the
/// indices whose pivots collapsed (or went non-positive).
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, Vec<usize>> {
    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None => return Err(collapsed_pivots(a)),
    };
    let l = chol.l_dirty();
    let bad: Vec<usize> = (0..a.nrows())
        .filter(|&j| {
            let piv = l[(j, j)] * l[(j, j)];
            !(piv > PIVOT_TOL * a[(j, j)]) || !piv.is_finite()
        })
        .collect();
    if !bad.is_empty() {
        return Err(bad);
    }
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err((0..a.nrows()).collect())
    }
}

/// Runs an unpivoted Cholesky by hand, skipping collapsed columns, and
/// reports which ones collapsed.
fn collapsed_pivots(a: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut bad = Vec::new();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL * a[(j, j)]) {
            bad.push(j);
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    if bad.is_empty() {
        // nalgebra refused but every pivot looked fine; blame the whole system
        bad = (0..n).collect();
    }
    bad
}
