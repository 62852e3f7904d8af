//! Per-unit, per-arm conditional mean and variance of the outcome.
//!
//! Column `a` of every matrix comes from a learner fitted on the units
//! observed under arm `a` and then evaluated on all `N` units, which imputes
//! the counterfactual moments. The variance is the plug-in
//! `E[Y^2 | a, X] - E[Y | a, X]^2`, floored at a small positive value.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{select_rows, validate, Dataset};
use crate::error::{OplError, Result};
use crate::regression::{fit_ols, predict_ols, LinearModel};
use crate::stats::sample_variance;

/// A regression learner for conditional means.
pub trait MomentLearner {
    /// Fits on `(x_train, y_train)` and predicts on every row of `x_eval`.
    fn fit_predict(
        &self,
        x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_eval: &DMatrix<f64>,
    ) -> Result<Vec<f64>>;
}

/// Built-in least-squares learners.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// OLS on all features with an intercept.
    #[default]
    Linear,
    /// Sample mean of the arm.
    InterceptOnly,
    /// OLS on the listed feature columns (0-based) with an intercept.
    Columns { columns: Vec<usize> },
}

impl LearnerSpec {
    fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            LearnerSpec::Linear => Ok(x.clone()),
            LearnerSpec::InterceptOnly => Ok(DMatrix::zeros(x.nrows(), 0)),
            LearnerSpec::Columns { columns } => {
                if let Some(&c) = columns.iter().find(|&&c| c >= x.ncols()) {
                    return Err(OplError::InvalidArgument(format!(
                        "learner column {c} outside 0..{}",
                        x.ncols()
                    )));
                }
                Ok(x.select_columns(columns.iter()))
            }
        }
    }
}

impl LearnerSpec {
    /// The fitted least-squares model on the learner's feature columns.
    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
        fit_ols(&self.project(x)?, y)
    }
}

impl MomentLearner for LearnerSpec {
    fn fit_predict(
        &self,
        x_train: &DMatrix<f64>,
        y_train: &[f64],
        x_eval: &DMatrix<f64>,
    ) -> Result<Vec<f64>> {
        let model = self.fit(x_train, y_train)?;
        predict_ols(&model, &self.project(x_eval)?)
    }
}

/// Default floor: `1e-8` times the sample variance of `Y`, or `1e-8` when
/// that variance is zero.
pub fn default_variance_floor(outcomes: &[f64]) -> f64 {
    let v = sample_variance(outcomes);
    1e-8 * if v > 0.0 { v } else { 1.0 }
}

fn require_valid(d: &Dataset) -> Result<()> {
    let report = validate(d);
    if report.passed {
        Ok(())
    } else {
        Err(OplError::InvalidDataset(report.warnings.join("; ")))
    }
}

/// Fits `target` on each arm's subsample and predicts for all units.
fn per_arm_predictions(
    d: &Dataset,
    learner: &dyn MomentLearner,
    target: &[f64],
) -> Result<DMatrix<f64>> {
    let n = d.n_units();
    let mut out = DMatrix::zeros(n, d.n_actions);
    for a in 0..d.n_actions {
        let rows = d.arm_rows(a);
        let x_arm = select_rows(&d.features, &rows);
        let y_arm: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
        let pred = learner
            .fit_predict(&x_arm, &y_arm, &d.features)
            .map_err(|e| match e {
                OplError::RankDeficient { columns } => OplError::RankDeficient {
                    columns: columns
                        .into_iter()
                        .map(|c| format!("{c} (arm {})", d.action_labels[a]))
                        .collect(),
                },
                e => e,
            })?;
        if pred.len() != n {
            return Err(OplError::Dimension(format!(
                "learner returned {} predictions for {n} units",
                pred.len()
            )));
        }
        for (i, v) in pred.into_iter().enumerate() {
            out[(i, a)] = v;
        }
    }
    Ok(out)
}

/// `N x M` matrix of `E[Y | A = a, X_i]`.
pub fn estimate_conditional_means(d: &Dataset, learner: &dyn MomentLearner) -> Result<DMatrix<f64>> {
    require_valid(d)?;
    per_arm_predictions(d, learner, &d.outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalVariance {
    pub sigma2: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Cells where the raw plug-in fell below the floor.
    pub clamped_count: usize,
}

/// Floors a raw variance matrix and takes the square root.
fn floor_variance(raw: DMatrix<f64>, floor: f64) -> ConditionalVariance {
    let mut clamped_count = 0;
    let sigma2 = raw.map(|v| {
        if v < floor {
            clamped_count += 1;
            floor
        } else {
            v
        }
    });
    let sigma = sigma2.map(f64::sqrt);
    ConditionalVariance { sigma2, sigma, clamped_count }
}

pub fn estimate_conditional_variance(
    d: &Dataset,
    learner: &dyn MomentLearner,
    variance_floor: f64,
) -> Result<ConditionalVariance> {
    if !(variance_floor > 0.0) || !variance_floor.is_finite() {
        return Err(OplError::InvalidArgument(format!(
            "variance floor must be positive, got {variance_floor}"
        )));
    }
    require_valid(d)?;
    let y2: Vec<f64> = d.outcomes.iter().map(|y| y * y).collect();
    let second = per_arm_predictions(d, learner, &y2)?;
    let first = per_arm_predictions(d, learner, &d.outcomes)?;
    let raw = second.zip_map(&first, |s, m| s - m * m);
    Ok(floor_variance(raw, variance_floor))
}

/// The return/risk pair for every unit and arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMoments {
    pub mu: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub variance_floor: f64,
    pub clamped_count: usize,
}

impl ArmMoments {
    /// Assembles moments from raw means and variances, flooring the variance.
    pub fn new(mu: DMatrix<f64>, sigma2_raw: DMatrix<f64>, variance_floor: f64) -> Result<Self> {
        if mu.shape() != sigma2_raw.shape() {
            return Err(OplError::Dimension(format!(
                "mu {:?} vs sigma2 {:?}",
                mu.shape(),
                sigma2_raw.shape()
            )));
        }
        if !(variance_floor > 0.0) || !variance_floor.is_finite() {
            return Err(OplError::InvalidArgument(format!(
                "variance floor must be positive, got {variance_floor}"
            )));
        }
        if mu.iter().chain(sigma2_raw.iter()).any(|v| !v.is_finite()) {
            return Err(OplError::InvalidArgument("non-finite moments".into()));
        }
        let v = floor_variance(sigma2_raw, variance_floor);
        Ok(ArmMoments {
            mu,
            sigma2: v.sigma2,
            sigma: v.sigma,
            variance_floor,
            clamped_count: v.clamped_count,
        })
    }

    /// Builds moments from means and standard deviations.
    pub fn from_mean_sd(mu: DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let floor = f64::MIN_POSITIVE;
        Self::new(mu, sigma.map(|s| s * s), floor)
    }

    pub fn n_units(&self) -> usize {
        self.mu.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.mu.ncols()
    }
}

/// Means and floored variances for every unit and arm.
pub fn build_arm_moments(
    d: &Dataset,
    learner: &dyn MomentLearner,
    variance_floor: f64,
) -> Result<ArmMoments> {
    let mu = estimate_conditional_means(d, learner)?;
    let var = estimate_conditional_variance(d, learner, variance_floor)?;
    Ok(ArmMoments {
        mu,
        sigma2: var.sigma2,
        sigma: var.sigma,
        variance_floor,
        clamped_count: var.clamped_count,
    })
}
