use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spd_solve;
use crate::error::{OplError, Result};

/// Least-squares fit `y ~ 1 + X`, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub training_rows: usize,
    /// Ridge added to the non-intercept diagonal of `X'X`; zero unless the
    /// normal equations were numerically singular.
    pub ridge: f64,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }
}

fn column_name(j: usize) -> String {
    if j == 0 {
        "intercept".to_string()
    } else {
        format!("x{j}")
    }
}

/// Solves the normal equations `(Z'Z) b = Z'y` with `Z = [1 | X]` by Cholesky.
///
/// When the system is numerically singular a ridge of
/// `1e-8 * trace(Z'Z) / (p + 1)` is added to the feature diagonal and the
/// solve is retried; the intercept is never penalised, so residuals keep
/// mean zero.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(OplError::Dimension(format!("{n} rows in X, {} in y", y.len())));
    }
    if n < p + 1 {
        return Err(OplError::InvalidArgument(format!(
            "{n} rows cannot identify {} coefficients",
            p + 1
        )));
    }
    let d = p + 1;
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut z = vec![1.0; d];
    for i in 0..n {
        for j in 0..p {
            z[j + 1] = x[(i, j)];
        }
        for r in 0..d {
            rhs[r] += z[r] * y[i];
            for c in 0..=r {
                gram[(r, c)] += z[r] * z[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            gram[(c, r)] = gram[(r, c)];
        }
    }

    let (beta, ridge) = match spd_solve(&gram, &rhs) {
        Ok(b) => (b, 0.0),
        Err(_) => {
            let lambda = 1e-8 * gram.trace() / d as f64;
            let mut ridged = gram.clone();
            for j in 1..d {
                ridged[(j, j)] += lambda;
            }
            match spd_solve(&ridged, &rhs) {
                Ok(b) if lambda > 0.0 => (b, lambda),
                Ok(_) | Err(_) => {
                    let cols = match spd_solve(&gram, &rhs) {
                        Err(c) => c,
                        Ok(_) => (0..d).collect(),
                    };
                    return Err(OplError::RankDeficient {
                        columns: cols.into_iter().map(column_name).collect(),
                    });
                }
            }
        }
    };
    Ok(LinearModel {
        coefficients: beta.iter().copied().collect(),
        training_rows: n,
        ridge,
    })
}

pub fn predict_ols(m: &LinearModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != m.n_features() {
        return Err(OplError::Dimension(format!(
            "model has {} features, input has {}",
            m.n_features(),
            x.ncols()
        )));
    }
    let c = &m.coefficients;
    Ok((0..x.nrows())
        .map(|i| {
            let mut v = c[0];
            for j in 0..x.ncols() {
                v += c[j + 1] * x[(i, j)];
            }
            v
        })
        .collect())
}
