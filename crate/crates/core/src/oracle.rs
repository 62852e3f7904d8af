//! Synthetic observational data with known potential outcomes.
//!
//! For unit `i` and arm `a`:
//!
//! ```text
//! Y_i(a) = mu(a, X_i) + sigma(a, X_i) * eps_ia,    eps_ia ~ N(0, 1) iid
//! mu(a, x)    = alpha_a + beta_a' x [+ sum_j kappa_aj x_j^2]
//! sigma(a, x) = softplus(gamma_a + delta_a' x)
//! ```
//!
//! The action is drawn from the assignment mechanism given `X_i` only, so
//! treatment is unconfounded by construction, and the observed outcome is
//! `Y_i = Y_i(A_i)`.
//!
//! Randomness comes from a single `ChaCha8Rng` stream seeded with
//! `seed_from_u64(seed)`, consumed per unit in the order: features, the `M`
//! noise draws, then the action draw.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OplError, Result};
use crate::policy::RiskPreference;
use crate::stats::{mean, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDist {
    /// Standard normal.
    Normal,
    /// Uniform on `[0, 1)`.
    Uniform,
    /// 0 or 1 with probability 1/2.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Assignment {
    /// Every arm with probability `1/M`.
    #[default]
    Uniform,
    /// Softmax of `c_a0 + c_a' x`; `coeffs` is `M x (p+1)`.
    Logit { coeffs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    pub n_actions: usize,
    pub n_features: usize,
    /// `M x (p+1)`: intercept then slopes of the conditional mean.
    pub mean_coeffs: Vec<Vec<f64>>,
    /// Optional `M x p` coefficients on squared features.
    #[serde(default)]
    pub mean_quadratic: Option<Vec<Vec<f64>>>,
    /// `M x (p+1)`: coefficients inside the softplus of the noise scale.
    pub noise_scale_coeffs: Vec<Vec<f64>>,
    #[serde(default)]
    pub assignment: Assignment,
    /// One entry per feature; empty means all standard normal.
    #[serde(default)]
    pub feature_dist: Vec<FeatureDist>,
    pub seed: u64,
}

impl DgpSpec {
    fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
        if m.len() != rows || m.iter().any(|r| r.len() != cols) {
            return Err(OplError::InvalidArgument(format!(
                "{name} must be {rows} x {cols}"
            )));
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OplError::InvalidArgument(format!("{name} has non-finite entries")));
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let (m, p) = (self.n_actions, self.n_features);
        if m < 2 {
            return Err(OplError::InvalidArgument("need at least 2 actions".into()));
        }
        if self.n_units == 0 {
            return Err(OplError::InvalidArgument("need at least 1 unit".into()));
        }
        Self::check_matrix("mean_coeffs", &self.mean_coeffs, m, p + 1)?;
        Self::check_matrix("noise_scale_coeffs", &self.noise_scale_coeffs, m, p + 1)?;
        if let Some(q) = &self.mean_quadratic {
            Self::check_matrix("mean_quadratic", q, m, p)?;
        }
        if let Assignment::Logit { coeffs } = &self.assignment {
            Self::check_matrix("assignment coeffs", coeffs, m, p + 1)?;
        }
        if !self.feature_dist.is_empty() && self.feature_dist.len() != p {
            return Err(OplError::InvalidArgument(format!(
                "feature_dist has {} entries for {p} features",
                self.feature_dist.len()
            )));
        }
        Ok(())
    }

    fn dist(&self, j: usize) -> FeatureDist {
        self.feature_dist.get(j).copied().unwrap_or(FeatureDist::Normal)
    }

    pub fn true_mean(&self, a: usize, x: &[f64]) -> f64 {
        let c = &self.mean_coeffs[a];
        let mut v = c[0] + x.iter().zip(&c[1..]).map(|(x, b)| x * b).sum::<f64>();
        if let Some(q) = &self.mean_quadratic {
            v += x.iter().zip(&q[a]).map(|(x, k)| k * x * x).sum::<f64>();
        }
        v
    }

    pub fn true_sd(&self, a: usize, x: &[f64]) -> f64 {
        let c = &self.noise_scale_coeffs[a];
        softplus(c[0] + x.iter().zip(&c[1..]).map(|(x, b)| x * b).sum::<f64>())
    }

    pub fn true_propensity(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n_actions;
        match &self.assignment {
            Assignment::Uniform => vec![1.0 / m as f64; m],
            Assignment::Logit { coeffs } => {
                let s: Vec<f64> = coeffs
                    .iter()
                    .map(|c| c[0] + x.iter().zip(&c[1..]).map(|(x, b)| x * b).sum::<f64>())
                    .collect();
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = e.iter().sum();
                e.into_iter().map(|v| v / total).collect()
            }
        }
    }
}

/// Observed data plus everything normally hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleData {
    pub dataset: Dataset,
    /// `N x M` matrix of `Y_i(a)`.
    pub potential_outcomes: DMatrix<f64>,
    pub true_mu: DMatrix<f64>,
    pub true_sigma: DMatrix<f64>,
    pub true_propensity: DMatrix<f64>,
}

pub fn generate(spec: &DgpSpec) -> Result<OracleData> {
    spec.check()?;
    let (n, m, p) = (spec.n_units, spec.n_actions, spec.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = DMatrix::zeros(n, p);
    let mut potential = DMatrix::zeros(n, m);
    let mut true_mu = DMatrix::zeros(n, m);
    let mut true_sigma = DMatrix::zeros(n, m);
    let mut true_prop = DMatrix::zeros(n, m);
    let mut actions = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut x = vec![0.0; p];
    for i in 0..n {
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = match spec.dist(j) {
                FeatureDist::Normal => rng.sample(StandardNormal),
                FeatureDist::Uniform => rng.random::<f64>(),
                FeatureDist::Bernoulli => f64::from(u8::from(rng.random::<bool>())),
            };
            features[(i, j)] = *xj;
        }
        for a in 0..m {
            let eps: f64 = rng.sample(StandardNormal);
            let mu = spec.true_mean(a, &x);
            let sd = spec.true_sd(a, &x);
            true_mu[(i, a)] = mu;
            true_sigma[(i, a)] = sd;
            potential[(i, a)] = mu + sd * eps;
        }
        let probs = spec.true_propensity(&x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = m - 1;
        for (a, pa) in probs.iter().enumerate() {
            acc += pa;
            if u < acc {
                action = a;
                break;
            }
        }
        for (a, pa) in probs.into_iter().enumerate() {
            true_prop[(i, a)] = pa;
        }
        actions.push(action);
        outcomes.push(potential[(i, action)]);
    }
    let dataset = Dataset::new(outcomes, actions, features, m)?;
    let od = OracleData {
        dataset,
        potential_outcomes: potential,
        true_mu,
        true_sigma,
        true_propensity: true_prop,
    };
    debug_assert!(consistency_holds(&od));
    Ok(od)
}

/// `Y_i = Y_i(A_i)` for every unit.
pub fn consistency_holds(od: &OracleData) -> bool {
    let d = &od.dataset;
    (0..d.n_units()).all(|i| d.outcomes[i] == od.potential_outcomes[(i, d.actions[i])])
}

/// Finite-population welfare: mean of `Y_i(pi_i)`.
pub fn true_value(od: &OracleData, actions: &[usize]) -> Result<f64> {
    let (n, m) = od.potential_outcomes.shape();
    if actions.len() != n || actions.iter().any(|&a| a >= m) {
        return Err(OplError::InvalidArgument(format!(
            "policy must assign one of {m} actions to each of {n} units"
        )));
    }
    let terms: Vec<f64> = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| od.potential_outcomes[(i, a)])
        .collect();
    Ok(mean(&terms))
}

/// Per-unit argmax of the true utility, smallest index on ties.
pub fn oracle_policy(od: &OracleData, pref: RiskPreference) -> Vec<usize> {
    let (n, m) = od.true_mu.shape();
    (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_u = pref.utility(od.true_mu[(i, 0)], od.true_sigma[(i, 0)]);
            for a in 1..m {
                let u = pref.utility(od.true_mu[(i, a)], od.true_sigma[(i, a)]);
                if u > best_u {
                    best = a;
                    best_u = u;
                }
            }
            best
        })
        .collect()
}

/// Writes the per-unit hidden quantities: `unit_id`, then `y_<label>`,
/// `mu_<label>`, `sigma_<label>`, `prop_<label>` for every arm.
pub fn write_sidecar(od: &OracleData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = &od.dataset;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit_id".to_string()];
    for prefix in ["y", "mu", "sigma", "prop"] {
        header.extend(d.action_labels.iter().map(|l| format!("{prefix}_{l}")));
    }
    w.write_record(&header)?;
    for i in 0..d.n_units() {
        let mut rec = vec![d.unit_ids[i].clone()];
        for mat in [&od.potential_outcomes, &od.true_mu, &od.true_sigma, &od.true_propensity] {
            rec.extend((0..d.n_actions).map(|a| mat[(i, a)].to_string()));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| OplError::Internal(e.to_string()))?;
    File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| OplError::io(path, e))
}

/// Reads the potential outcomes from a sidecar, aligned to `d` by unit id.
pub fn read_potential_outcomes(path: impl AsRef<Path>, d: &Dataset) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| OplError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| OplError::MissingColumn(name.to_string()))
    };
    let id_col = find("unit_id")?;
    let cols = d
        .action_labels
        .iter()
        .map(|l| find(&format!("y_{l}")))
        .collect::<Result<Vec<_>>>()?;
    let index: HashMap<&str, usize> = d.unit_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = DMatrix::from_element(d.n_units(), d.n_actions, f64::NAN);
    let mut seen = vec![false; d.n_units()];
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("");
        let &i = index.get(id).ok_or_else(|| OplError::BadCell {
            row: k + 1,
            column: "unit_id".into(),
            message: format!("unknown unit {id:?}"),
        })?;
        seen[i] = true;
        for (a, &c) in cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            out[(i, a)] = cell.trim().parse().map_err(|_| OplError::BadCell {
                row: k + 1,
                column: headers[c].to_string(),
                message: format!("non-numeric value {cell:?}"),
            })?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(OplError::InvalidArgument(format!(
            "sidecar has no row for unit {}",
            d.unit_ids[i]
        )));
    }
    Ok(out)
}
