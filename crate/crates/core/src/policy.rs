//! Per-unit action choice under a risk preference.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OplError, Result};
use crate::moments::ArmMoments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskPreference {
    /// Utility `mu`: the first-best rule.
    Neutral,
    /// Utility `mu / sigma`.
    Linear,
    /// Utility `mu / sigma^2`.
    Quadratic,
}

impl RiskPreference {
    pub const ALL: [RiskPreference; 3] = [
        RiskPreference::Neutral,
        RiskPreference::Linear,
        RiskPreference::Quadratic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskPreference::Neutral => "neutral",
            RiskPreference::Linear => "linear",
            RiskPreference::Quadratic => "quadratic",
        }
    }

    /// Utility of a single `(mu, sigma)` pair.
    pub fn utility(self, mu: f64, sigma: f64) -> f64 {
        match self {
            RiskPreference::Neutral => mu,
            RiskPreference::Linear => mu / sigma,
            RiskPreference::Quadratic => mu / (sigma * sigma),
        }
    }
}

impl fmt::Display for RiskPreference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskPreference {
    type Err = OplError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neutral" | "fb" => Ok(RiskPreference::Neutral),
            "linear" | "lra" => Ok(RiskPreference::Linear),
            "quadratic" | "qra" => Ok(RiskPreference::Quadratic),
            other => Err(OplError::InvalidArgument(format!(
                "unknown risk preference {other:?} (expected neutral, linear or quadratic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAssignment {
    pub preference: RiskPreference,
    pub actions: Vec<usize>,
    pub utility: DMatrix<f64>,
    /// Units whose utility row has more than one maximiser.
    pub ties_broken: usize,
    /// Units with a negative estimated mean on some arm. Only counted for
    /// risk-averse preferences, where the ratio ordering is fragile.
    pub negative_mean_units: usize,
}

impl PolicyAssignment {
    /// Share of units assigned to each of `n_actions` arms.
    pub fn shares(&self) -> Vec<f64> {
        let n_actions = self.utility.ncols();
        let mut counts = vec![0usize; n_actions];
        for &a in &self.actions {
            counts[a] += 1;
        }
        let n = self.actions.len() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

pub fn utility_matrix(m: &ArmMoments, pref: RiskPreference) -> DMatrix<f64> {
    match pref {
        RiskPreference::Neutral => m.mu.clone(),
        RiskPreference::Linear => m.mu.component_div(&m.sigma),
        RiskPreference::Quadratic => m.mu.component_div(&m.sigma2),
    }
}

/// Index of the first maximum of row `i` and whether it is shared.
pub(crate) fn row_argmax(u: &DMatrix<f64>, i: usize) -> (usize, bool) {
    let mut best = 0;
    let mut tied = false;
    for a in 1..u.ncols() {
        let v = u[(i, a)];
        if v > u[(i, best)] {
            best = a;
            tied = false;
        } else if v == u[(i, best)] {
            tied = true;
        }
    }
    (best, tied)
}

/// Per-unit argmax of the utility, ties going to the smallest arm index.
pub fn assign_policy(m: &ArmMoments, pref: RiskPreference) -> PolicyAssignment {
    let utility = utility_matrix(m, pref);
    let n = utility.nrows();
    let mut actions = Vec::with_capacity(n);
    let mut ties_broken = 0;
    for i in 0..n {
        let (a, tied) = row_argmax(&utility, i);
        actions.push(a);
        ties_broken += usize::from(tied);
    }
    let negative_mean_units = match pref {
        RiskPreference::Neutral => 0,
        _ => m.mu.row_iter().filter(|r| r.iter().any(|&v| v < 0.0)).count(),
    };
    PolicyAssignment {
        preference: pref,
        actions,
        utility,
        ties_broken,
        negative_mean_units,
    }
}

/// Conditional effect of arm `a` relative to `a_prime` for every unit.
pub fn cate(m: &ArmMoments, a: usize, a_prime: usize) -> Result<Vec<f64>> {
    let k = m.n_actions();
    if a >= k || a_prime >= k {
        return Err(OplError::InvalidArgument(format!(
            "arms ({a}, {a_prime}) outside 0..{k}"
        )));
    }
    if a == a_prime {
        return Err(OplError::InvalidArgument(format!(
            "effect of arm {a} against itself is undefined"
        )));
    }
    Ok((0..m.n_units())
        .map(|i| m.mu[(i, a)] - m.mu[(i, a_prime)])
        .collect())
}
