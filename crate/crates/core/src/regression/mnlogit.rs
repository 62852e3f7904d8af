use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spd_solve;
use crate::error::{OplError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MnLogitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the gradient of the
    /// per-unit (mean) penalised log-likelihood.
    pub tol: f64,
    /// L2 penalty on non-intercept coefficients, on the per-unit scale.
    pub ridge: f64,
}

impl Default for MnLogitOptions {
    fn default() -> Self {
        MnLogitOptions {
            max_iter: 100,
            tol: 1e-8,
            ridge: 1e-6,
        }
    }
}

/// Multinomial logit with class 0 as the baseline (score fixed at zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialLogitModel {
    /// `(M-1) x (p+1)`; row `k` holds the intercept and slopes of class `k+1`.
    pub coefficients: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// Penalised mean log-likelihood at the start and after every accepted
    /// Newton step.
    pub log_likelihood_trace: Vec<f64>,
}

impl MultinomialLogitModel {
    pub fn n_classes(&self) -> usize {
        self.coefficients.nrows() + 1
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.ncols() - 1
    }
}

const SEPARATION_LIMIT: f64 = 1e6;
const MAX_HALVINGS: usize = 50;

/// Writes softmax probabilities of one row into `out` (length `M`).
fn row_probabilities(theta: &[f64], d: usize, z: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for k in 1..out.len() {
        let w = &theta[(k - 1) * d..k * d];
        out[k] = w.iter().zip(z).map(|(a, b)| a * b).sum();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in out.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in out.iter_mut() {
        *s /= total;
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    actions: &'a [usize],
    m: usize,
    d: usize,
    ridge: f64,
}

impl Problem<'_> {
    fn design_row(&self, i: usize, z: &mut [f64]) {
        z[0] = 1.0;
        for (j, zj) in z.iter_mut().enumerate().take(self.d).skip(1) {
            *zj = self.x[(i, j - 1)];
        }
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.m - 1 {
            for j in 1..self.d {
                s += theta[k * self.d + j].powi(2);
            }
        }
        0.5 * self.ridge * s
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let n = self.x.nrows();
        let mut z = vec![0.0; self.d];
        let mut prob = vec![0.0; self.m];
        let mut ll = 0.0;
        for i in 0..n {
            self.design_row(i, &mut z);
            row_probabilities(theta, self.d, &z, &mut prob);
            ll += prob[self.actions[i]].ln();
        }
        ll / n as f64 - self.penalty(theta)
    }

    /// Gradient and negated Hessian of the penalised mean log-likelihood.
    fn derivatives(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.x.nrows();
        let (d, k_dim) = (self.d, self.m - 1);
        let dim = k_dim * d;
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        let mut z = vec![0.0; d];
        let mut prob = vec![0.0; self.m];
        for i in 0..n {
            self.design_row(i, &mut z);
            row_probabilities(theta, d, &z, &mut prob);
            for k in 0..k_dim {
                let pk = prob[k + 1];
                let resid = f64::from(u8::from(self.actions[i] == k + 1)) - pk;
                for j in 0..d {
                    g[k * d + j] += resid * z[j];
                }
                for l in 0..=k {
                    let w = if l == k { pk * (1.0 - pk) } else { -pk * prob[l + 1] };
                    for r in 0..d {
                        for c in 0..d {
                            h[(k * d + r, l * d + c)] += w * z[r] * z[c];
                        }
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        g *= inv_n;
        h *= inv_n;
        for k in 0..k_dim {
            for j in 1..d {
                g[k * d + j] -= self.ridge * theta[k * d + j];
                h[(k * d + j, k * d + j)] += self.ridge;
            }
        }
        for r in 0..dim {
            for c in (r + 1)..dim {
                h[(r, c)] = h[(c, r)];
            }
        }
        (g, h)
    }
}

/// Newton ascent on the ridge-penalised multinomial log-likelihood with
/// step halving. Steps are only accepted if the objective does not decrease,
/// so `log_likelihood_trace` is monotone.
pub fn fit_mnlogit(
    x: &DMatrix<f64>,
    actions: &[usize],
    n_classes: usize,
    opts: &MnLogitOptions,
) -> Result<MultinomialLogitModel> {
    let n = x.nrows();
    let p = x.ncols();
    if actions.len() != n {
        return Err(OplError::Dimension(format!("{n} rows, {} actions", actions.len())));
    }
    if n_classes < 2 {
        return Err(OplError::InvalidArgument("need at least 2 classes".into()));
    }
    if !(opts.tol > 0.0) || opts.ridge < 0.0 || !opts.ridge.is_finite() {
        return Err(OplError::InvalidArgument(format!("bad logit options {opts:?}")));
    }
    let mut counts = vec![0usize; n_classes];
    for &a in actions {
        if a >= n_classes {
            return Err(OplError::InvalidArgument(format!("class {a} outside 0..{n_classes}")));
        }
        counts[a] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(OplError::UnobservedAction(k.to_string()));
    }
    if n < n_classes * (p + 1) {
        return Err(OplError::InvalidArgument(format!(
            "{n} rows cannot support {n_classes} classes with {p} features"
        )));
    }

    let prob = Problem { x, actions, m: n_classes, d: p + 1, ridge: opts.ridge };
    let dim = (n_classes - 1) * (p + 1);
    let mut theta = vec![0.0; dim];
    // start intercepts at the log share ratios
    for k in 1..n_classes {
        theta[(k - 1) * prob.d] = (counts[k] as f64 / counts[0] as f64).ln();
    }
    let mut current = prob.objective(&theta);
    let mut trace = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;
    loop {
        let (g, h) = prob.derivatives(&theta);
        grad_norm = g.amax();
        if grad_norm < opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let step = match spd_solve(&h, &g) {
            Ok(s) => s,
            Err(_) => {
                let mut hr = h.clone();
                let bump = 1e-8 * (1.0 + h.trace() / dim as f64);
                for j in 0..dim {
                    hr[(j, j)] += bump;
                }
                spd_solve(&hr, &g).map_err(|_| {
                    OplError::Internal("singular logit Hessian; add ridge".into())
                })?
            }
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let val = prob.objective(&cand);
            if val >= current {
                accepted = Some((cand, val));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        let Some((cand, val)) = accepted else {
            // no ascent direction left at machine precision
            break;
        };
        theta = cand;
        current = val;
        trace.push(current);
        let max_abs = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if max_abs > SEPARATION_LIMIT || !max_abs.is_finite() {
            return Err(OplError::QuasiSeparation { max_abs, iterations });
        }
    }
    let max_abs = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if !converged && max_abs > SEPARATION_LIMIT {
        return Err(OplError::QuasiSeparation { max_abs, iterations });
    }
    Ok(MultinomialLogitModel {
        coefficients: DMatrix::from_row_slice(n_classes - 1, p + 1, &theta),
        converged,
        iterations,
        final_gradient_norm: grad_norm,
        log_likelihood_trace: trace,
    })
}

/// `K x M` softmax probabilities. Clipping happens downstream.
pub fn predict_proba(m: &MultinomialLogitModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != m.n_features() {
        return Err(OplError::Dimension(format!(
            "model has {} features, input has {}",
            m.n_features(),
            x.ncols()
        )));
    }
    let classes = m.n_classes();
    let d = m.n_features() + 1;
    let theta: Vec<f64> = m.coefficients.transpose().iter().copied().collect();
    let mut out = DMatrix::zeros(x.nrows(), classes);
    let mut z = vec![1.0; d];
    let mut prob = vec![0.0; classes];
    for i in 0..x.nrows() {
        for j in 1..d {
            z[j] = x[(i, j - 1)];
        }
        row_probabilities(&theta, d, &z, &mut prob);
        for k in 0..classes {
            out[(i, k)] = prob[k];
        }
    }
    Ok(out)
}
