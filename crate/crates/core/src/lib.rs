//! First-best optimal policy learning for multi-action treatments.
//!
//! The pipeline takes observational triplets `(Y, A, X)`, estimates per-arm
//! conditional means and variances of the outcome, assigns each unit the arm
//! maximising a risk-neutral, linear risk-averse (`mu / sigma`) or quadratic
//! risk-averse (`mu / sigma^2`) utility, and evaluates the welfare of any
//! policy with regression-adjustment, inverse-probability-weighting and
//! doubly robust estimators.
//!
//! [`oracle`] generates synthetic data with known potential outcomes so every
//! stage can be checked against ground truth.

pub mod cli;
pub mod data;
pub mod error;
pub mod moments;
pub mod oracle;
pub mod policy;
pub mod regression;
pub mod stats;
pub mod value;

pub use data::{Dataset, Schema, ValidationReport};
pub use error::{OplError, Result};
pub use moments::{ArmMoments, LearnerSpec, MomentLearner};
pub use oracle::{DgpSpec, OracleData};
pub use policy::{PolicyAssignment, RiskPreference};
pub use value::{Estimator, Policy, PropensityMatrix, ValueEstimate};
