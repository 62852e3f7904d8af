//! Welfare of a policy: regression adjustment, inverse probability weighting
//! and the doubly robust combination, plus regret against the first-best.
//!
//! All means use fixed-order pairwise summation, so estimates are
//! bit-reproducible.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OplError, Result};
use crate::policy::PolicyAssignment;
use crate::stats::mean;

/// A deterministic policy: one action per unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub label: String,
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn new(label: impl Into<String>, actions: Vec<usize>) -> Self {
        Policy { label: label.into(), actions }
    }

    /// The logged (behaviour) policy of a dataset.
    pub fn observed(d: &Dataset) -> Self {
        Policy::new("observed", d.actions.clone())
    }
}

impl From<&PolicyAssignment> for Policy {
    fn from(p: &PolicyAssignment) -> Self {
        Policy::new(p.preference.as_str(), p.actions.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    Ra,
    Ipw,
    Dr,
    True,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Estimator::Ra => "RA",
            Estimator::Ipw => "IPW",
            Estimator::Dr => "DR",
            Estimator::True => "TRUE",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = OplError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ra" => Ok(Estimator::Ra),
            "ipw" => Ok(Estimator::Ipw),
            "dr" => Ok(Estimator::Dr),
            "true" => Ok(Estimator::True),
            other => Err(OplError::InvalidArgument(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub estimator: Estimator,
    pub policy_label: String,
    pub value: f64,
}

/// Clipped propensity scores. Rows are not renormalised after clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityMatrix {
    pub p: DMatrix<f64>,
    pub clip_bounds: (f64, f64),
    pub clipped_count: usize,
}

pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);

/// Clamps every entry into `[low, high]`, counting the entries moved.
pub fn clip_propensities(p: &DMatrix<f64>, low: f64, high: f64) -> Result<PropensityMatrix> {
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(OplError::InvalidArgument(format!(
            "clip bounds must satisfy 0 < low < high < 1, got ({low}, {high})"
        )));
    }
    for (i, row) in p.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (s - 1.0).abs() > 1e-8 {
            return Err(OplError::InvalidArgument(format!(
                "propensity row {} is not a probability vector (sum {s})",
                i + 1
            )));
        }
    }
    let mut clipped_count = 0;
    let clipped = p.map(|v| {
        if v < low {
            clipped_count += 1;
            low
        } else if v > high {
            clipped_count += 1;
            high
        } else {
            v
        }
    });
    Ok(PropensityMatrix {
        p: clipped,
        clip_bounds: (low, high),
        clipped_count,
    })
}

fn check_policy(n: usize, m: usize, pol: &Policy) -> Result<()> {
    if pol.actions.len() != n {
        return Err(OplError::Dimension(format!(
            "policy `{}` covers {} units, expected {n}",
            pol.label,
            pol.actions.len()
        )));
    }
    if let Some(a) = pol.actions.iter().find(|&&a| a >= m) {
        return Err(OplError::InvalidArgument(format!(
            "policy `{}` uses action {a} outside 0..{m}",
            pol.label
        )));
    }
    Ok(())
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(OplError::Dimension(format!("{what} is {got:?}, expected {want:?}")));
    }
    Ok(())
}

fn ra_terms(q_hat: &DMatrix<f64>, pol: &Policy) -> Vec<f64> {
    pol.actions
        .iter()
        .enumerate()
        .map(|(i, &a)| q_hat[(i, a)])
        .collect()
}

/// `(1/N) sum_i Q(X_i, pi(X_i))`.
pub fn value_ra(q_hat: &DMatrix<f64>, pol: &Policy) -> Result<ValueEstimate> {
    check_policy(q_hat.nrows(), q_hat.ncols(), pol)?;
    Ok(ValueEstimate {
        estimator: Estimator::Ra,
        policy_label: pol.label.clone(),
        value: mean(&ra_terms(q_hat, pol)),
    })
}

fn observed_propensity(prop: &PropensityMatrix, i: usize, a: usize) -> Result<f64> {
    let p = prop.p[(i, a)];
    if p > 0.0 && p.is_finite() {
        Ok(p)
    } else {
        Err(OplError::Internal(format!(
            "propensity {p} at unit {} for its observed action",
            i + 1
        )))
    }
}

fn check_inputs(d: &Dataset, pol: &Policy, prop: &PropensityMatrix) -> Result<()> {
    check_policy(d.n_units(), d.n_actions, pol)?;
    check_shape("propensity matrix", prop.p.shape(), (d.n_units(), d.n_actions))
}

/// Horvitz-Thompson: `(1/N) sum_i 1[A_i = pi(X_i)] Y_i / P(A_i | X_i)`.
pub fn value_ipw(d: &Dataset, pol: &Policy, prop: &PropensityMatrix) -> Result<ValueEstimate> {
    check_inputs(d, pol, prop)?;
    let terms = (0..d.n_units())
        .map(|i| {
            let a = d.actions[i];
            if pol.actions[i] == a {
                Ok(d.outcomes[i] / observed_propensity(prop, i, a)?)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ValueEstimate {
        estimator: Estimator::Ipw,
        policy_label: pol.label.clone(),
        value: mean(&terms),
    })
}

/// Per-unit IPW-weighted residual `1[A_i = pi(X_i)] (Y_i - Q(X_i, A_i)) / P(A_i | X_i)`.
pub fn dr_correction_terms(
    d: &Dataset,
    pol: &Policy,
    q_hat: &DMatrix<f64>,
    prop: &PropensityMatrix,
) -> Result<Vec<f64>> {
    check_inputs(d, pol, prop)?;
    check_shape("outcome model", q_hat.shape(), (d.n_units(), d.n_actions))?;
    (0..d.n_units())
        .map(|i| {
            let a = d.actions[i];
            if pol.actions[i] == a {
                Ok((d.outcomes[i] - q_hat[(i, a)]) / observed_propensity(prop, i, a)?)
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// Regression adjustment plus the mean IPW-weighted residual at the observed
/// action.
pub fn value_dr(
    d: &Dataset,
    pol: &Policy,
    q_hat: &DMatrix<f64>,
    prop: &PropensityMatrix,
) -> Result<ValueEstimate> {
    let correction = dr_correction_terms(d, pol, q_hat, prop)?;
    let ra = value_ra(q_hat, pol)?.value;
    Ok(ValueEstimate {
        estimator: Estimator::Dr,
        policy_label: pol.label.clone(),
        value: ra + mean(&correction),
    })
}

/// Welfare lost by `v_alt` relative to the first-best `v_fb`.
pub fn regret(v_fb: &ValueEstimate, v_alt: &ValueEstimate) -> Result<f64> {
    if v_fb.estimator != v_alt.estimator {
        return Err(OplError::EstimatorMismatch(
            v_fb.estimator.to_string(),
            v_alt.estimator.to_string(),
        ));
    }
    Ok(v_fb.value - v_alt.value)
}
