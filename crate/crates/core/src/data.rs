//! The `(Y, A, X)` triplet: loading, validation and the canonical file format.
//!
//! Actions are recoded to contiguous indices `0..M` by ascending original
//! label; the original labels are kept in [`Dataset::action_labels`].
//! Features are passed through unscaled.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OplError, Result};

/// Column-name mapping for a delimited input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub action: String,
    pub features: Vec<String>,
    /// Unit identifier column; row numbers (from 1) are used when absent.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Declared action labels. When given, every label must be observed and
    /// no other label may appear.
    #[serde(default)]
    pub actions: Option<Vec<i64>>,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn new(outcome: &str, action: &str, features: &[&str]) -> Self {
        Schema {
            outcome: outcome.to_string(),
            action: action.to_string(),
            features: features.iter().map(|s| s.to_string()).collect(),
            id: None,
            delimiter: ',',
            actions: None,
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(|b| b.is_ascii())
            .ok_or_else(|| OplError::InvalidArgument(format!("delimiter {:?} is not ASCII", self.delimiter)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub outcomes: Vec<f64>,
    pub actions: Vec<usize>,
    /// N x p, one row per unit.
    pub features: DMatrix<f64>,
    pub n_actions: usize,
    pub unit_ids: Vec<String>,
    pub outcome_name: String,
    pub action_name: String,
    pub feature_names: Vec<String>,
    /// Original label of each recoded action, indexed by action.
    pub action_labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset with default names (`y`, `a`, `x1..xp`, labels `0..M`,
    /// unit ids `1..=N`) after checking every structural invariant.
    pub fn new(
        outcomes: Vec<f64>,
        actions: Vec<usize>,
        features: DMatrix<f64>,
        n_actions: usize,
    ) -> Result<Self> {
        let n = outcomes.len();
        let p = features.ncols();
        Self::with_names(
            outcomes,
            actions,
            features,
            n_actions,
            (1..=n).map(|i| i.to_string()).collect(),
            "y".into(),
            "a".into(),
            (1..=p).map(|j| format!("x{j}")).collect(),
            (0..n_actions).map(|a| a.to_string()).collect(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_names(
        outcomes: Vec<f64>,
        actions: Vec<usize>,
        features: DMatrix<f64>,
        n_actions: usize,
        unit_ids: Vec<String>,
        outcome_name: String,
        action_name: String,
        feature_names: Vec<String>,
        action_labels: Vec<String>,
    ) -> Result<Self> {
        let n = outcomes.len();
        let p = features.ncols();
        if n == 0 {
            return Err(OplError::EmptyInput);
        }
        if actions.len() != n || features.nrows() != n || unit_ids.len() != n {
            return Err(OplError::Dimension(format!(
                "{n} outcomes, {} actions, {} feature rows, {} unit ids",
                actions.len(),
                features.nrows(),
                unit_ids.len()
            )));
        }
        if feature_names.len() != p || action_labels.len() != n_actions {
            return Err(OplError::Dimension(
                "feature_names / action_labels length".into(),
            ));
        }
        if n_actions < 2 {
            return Err(OplError::InvalidDataset(format!(
                "need at least 2 actions, got {n_actions}"
            )));
        }
        let mut counts = vec![0usize; n_actions];
        for (i, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(OplError::InvalidDataset(format!(
                    "unit {}: action {a} outside 0..{n_actions}",
                    i + 1
                )));
            }
            counts[a] += 1;
        }
        if let Some(a) = counts.iter().position(|&c| c == 0) {
            return Err(OplError::UnobservedAction(action_labels[a].clone()));
        }
        if let Some(i) = outcomes.iter().position(|y| !y.is_finite()) {
            return Err(OplError::InvalidDataset(format!(
                "unit {}: non-finite outcome",
                i + 1
            )));
        }
        if let Some(k) = features.iter().position(|x| !x.is_finite()) {
            return Err(OplError::InvalidDataset(format!(
                "unit {}: non-finite feature `{}`",
                k % n + 1,
                feature_names[k / n]
            )));
        }
        if n < n_actions * (p + 2) {
            return Err(OplError::InvalidDataset(format!(
                "{n} units cannot support {n_actions} arms with {p} features (need {})",
                n_actions * (p + 2)
            )));
        }
        Ok(Dataset {
            outcomes,
            actions,
            features,
            n_actions,
            unit_ids,
            outcome_name,
            action_name,
            feature_names,
            action_labels,
        })
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_actions];
        for &a in &self.actions {
            counts[a] += 1;
        }
        counts
    }

    /// Row indices of the units observed under arm `a`.
    pub fn arm_rows(&self, a: usize) -> Vec<usize> {
        self.actions
            .iter()
            .enumerate()
            .filter(|(_, &ai)| ai == a)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of the dataset with the outcome vector replaced.
    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Self> {
        Self::with_names(
            outcomes,
            self.actions.clone(),
            self.features.clone(),
            self.n_actions,
            self.unit_ids.clone(),
            self.outcome_name.clone(),
            self.action_name.clone(),
            self.feature_names.clone(),
            self.action_labels.clone(),
        )
    }

    /// Looks up the recoded index of an original action label.
    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.action_labels.iter().position(|l| l == label)
    }

    /// Schema that reloads a file written by [`write_dataset`].
    pub fn canonical_schema(&self) -> Schema {
        Schema {
            outcome: self.outcome_name.clone(),
            action: self.action_name.clone(),
            features: self.feature_names.clone(),
            id: Some("unit_id".into()),
            delimiter: ',',
            actions: None,
        }
    }
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub arm_counts: Vec<usize>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

pub const NEGATIVE_OUTCOME_WARNING: &str = "negative outcomes present";

/// Per-arm support check. Fails when any arm has fewer than `p + 2` units;
/// warns (without failing) on negative outcomes.
pub fn validate(d: &Dataset) -> ValidationReport {
    let arm_counts = d.arm_counts();
    let need = d.n_features() + 2;
    let mut warnings = Vec::new();
    let mut passed = true;
    for (a, &c) in arm_counts.iter().enumerate() {
        if c < need {
            passed = false;
            warnings.push(format!(
                "action {} has {c} units; at least {need} required",
                d.action_labels[a]
            ));
        }
    }
    if d.outcomes.iter().any(|&y| y < 0.0) {
        warnings.push(NEGATIVE_OUTCOME_WARNING.to_string());
    }
    ValidationReport {
        arm_counts,
        warnings,
        passed,
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    let bad = |message: &str| OplError::BadCell {
        row,
        column: column.to_string(),
        message: message.to_string(),
    };
    let t = cell.trim();
    if t.is_empty() {
        return Err(bad("missing value"));
    }
    let v: f64 = t.parse().map_err(|_| bad(&format!("non-numeric value {t:?}")))?;
    if !v.is_finite() {
        return Err(bad("non-finite value"));
    }
    Ok(v)
}

fn parse_label(cell: &str, row: usize, column: &str) -> Result<i64> {
    let t = cell.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Ok(v);
    }
    let v = parse_number(t, row, column)?;
    if v.fract() != 0.0 || v.abs() > 9.0e15 {
        return Err(OplError::BadCell {
            row,
            column: column.to_string(),
            message: format!("action label {t:?} is not an integer"),
        });
    }
    Ok(v as i64)
}

/// Reads a delimited file with one header row and one row per unit.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    if schema.features.is_empty() {
        return Err(OplError::InvalidArgument("schema names no feature columns".into()));
    }
    let file = File::open(path).map_err(|e| OplError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(OplError::EmptyInput);
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| OplError::MissingColumn(name.to_string()))
    };
    let y_col = col(&schema.outcome)?;
    let a_col = col(&schema.action)?;
    let x_cols = schema
        .features
        .iter()
        .map(|f| col(f))
        .collect::<Result<Vec<_>>>()?;
    let id_col = schema.id.as_deref().map(col).transpose()?;

    let p = x_cols.len();
    let mut outcomes = Vec::new();
    let mut raw_actions = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    let mut ids = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let cell = |c: usize| record.get(c).unwrap_or("");
        outcomes.push(parse_number(cell(y_col), row, &schema.outcome)?);
        raw_actions.push(parse_label(cell(a_col), row, &schema.action)?);
        for (j, &c) in x_cols.iter().enumerate() {
            feats.push(parse_number(cell(c), row, &schema.features[j])?);
        }
        ids.push(match id_col {
            Some(c) => cell(c).trim().to_string(),
            None => row.to_string(),
        });
    }
    if outcomes.is_empty() {
        return Err(OplError::EmptyInput);
    }

    let observed: BTreeSet<i64> = raw_actions.iter().copied().collect();
    let labels: Vec<i64> = match &schema.actions {
        Some(declared) => {
            let declared: BTreeSet<i64> = declared.iter().copied().collect();
            if let Some(extra) = observed.difference(&declared).next() {
                return Err(OplError::InvalidDataset(format!(
                    "action {extra} is not among the declared actions"
                )));
            }
            if let Some(missing) = declared.difference(&observed).next() {
                return Err(OplError::UnobservedAction(missing.to_string()));
            }
            declared.into_iter().collect()
        }
        None => observed.into_iter().collect(),
    };
    let code: BTreeMap<i64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let actions = raw_actions.iter().map(|l| code[l]).collect();
    let n = outcomes.len();
    let features = DMatrix::from_row_slice(n, p, &feats);
    Dataset::with_names(
        outcomes,
        actions,
        features,
        labels.len(),
        ids,
        schema.outcome.clone(),
        schema.action.clone(),
        schema.features.clone(),
        labels.iter().map(|l| l.to_string()).collect(),
    )
}

/// Writes the canonical format: `unit_id`, outcome, original action label,
/// then features. Floats use the shortest representation that parses back
/// to the same value.
pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit_id".to_string(), d.outcome_name.clone(), d.action_name.clone()];
    header.extend(d.feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..d.n_units() {
        let mut rec = vec![
            d.unit_ids[i].clone(),
            d.outcomes[i].to_string(),
            d.action_labels[d.actions[i]].clone(),
        ];
        rec.extend((0..d.n_features()).map(|j| d.features[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| OplError::Internal(e.to_string()))?;
    let mut f = File::create(path).map_err(|e| OplError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| OplError::io(path, e))
}
