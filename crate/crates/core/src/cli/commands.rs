//! The four subcommands. Each writes its artifacts into the run's output
//! directory and returns a [`RunReport`].

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TableFormat};
use super::manifest::Manifest;
use super::svg::{scatter_svg, ScatterPoint};
use crate::data::{load_dataset, select_rows, validate, write_dataset, Dataset, Schema};
use crate::error::{OplError, Result};
use crate::moments::{build_arm_moments, default_variance_floor, estimate_conditional_means, ArmMoments};
use crate::oracle::{generate, read_potential_outcomes, write_sidecar};
use crate::policy::{assign_policy, row_argmax, PolicyAssignment, RiskPreference};
use crate::regression::{fit_mnlogit, predict_proba};
use crate::stats::mean;
use crate::value::{
    clip_propensities, regret, value_dr, value_ipw, value_ra, Estimator, Policy, ValueEstimate,
};

pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const SHARES_FILE: &str = "shares.csv";
pub const VALUES_JSON: &str = "values.json";
pub const VALUES_CSV: &str = "values.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const FB_LABEL: &str = "neutral";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyShares {
    pub policy: String,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRow {
    pub policy_label: String,
    pub estimator: Estimator,
    pub value: f64,
    pub regret_vs_fb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub action: String,
    /// Intercept first, then the learner's feature columns.
    pub coefficients: Vec<f64>,
    pub training_rows: usize,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// One row per non-baseline action.
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunReport {
    pub command: String,
    pub n_units: usize,
    pub n_actions: usize,
    pub action_labels: Vec<String>,
    pub shares: Vec<PolicyShares>,
    pub values: Vec<ValueRow>,
    pub clamped_cells: Option<usize>,
    pub clipped_propensities: Option<usize>,
    pub mean_models: Vec<ArmModel>,
    pub propensity_model: Option<PropensityDiagnostics>,
    pub warnings: Vec<String>,
    /// Problems that do not abort the run but make it exit non-zero.
    pub failed_checks: Vec<String>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failed_checks.is_empty() {
            0
        } else {
            2
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| OplError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| OplError::Internal(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| OplError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OplError::io(dir, e))
}

/// `y`, `a`, optional `unit_id`, everything else a feature.
fn infer_schema(path: &Path) -> Result<Schema> {
    let file = fs::File::open(path).map_err(|e| OplError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(OplError::EmptyInput);
    }
    for required in ["y", "a"] {
        if !headers.iter().any(|h| h == required) {
            return Err(OplError::MissingColumn(required.into()));
        }
    }
    let has_id = headers.iter().any(|h| h == "unit_id");
    Ok(Schema {
        outcome: "y".into(),
        action: "a".into(),
        features: headers
            .iter()
            .filter(|h| !matches!(h.as_str(), "y" | "a" | "unit_id"))
            .cloned()
            .collect(),
        id: has_id.then(|| "unit_id".to_string()),
        delimiter: ',',
        actions: None,
    })
}

fn load_input(cfg: &RunConfig) -> Result<(Dataset, Vec<String>)> {
    let input = cfg.input_path()?;
    let schema = match &cfg.schema {
        Some(s) => s.clone(),
        None => infer_schema(input)?,
    };
    let d = load_dataset(input, &schema)?;
    let report = validate(&d);
    if !report.passed {
        return Err(OplError::InvalidDataset(report.warnings.join("; ")));
    }
    Ok((d, report.warnings))
}

fn unique_preferences(prefs: &[RiskPreference]) -> Vec<RiskPreference> {
    let mut out: Vec<RiskPreference> = Vec::new();
    for &p in prefs {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn mean_models(d: &Dataset, cfg: &RunConfig) -> Result<Vec<ArmModel>> {
    (0..d.n_actions)
        .map(|a| {
            let rows = d.arm_rows(a);
            let x = select_rows(&d.features, &rows);
            let y: Vec<f64> = rows.iter().map(|&i| d.outcomes[i]).collect();
            let m = cfg.learner.fit(&x, &y)?;
            Ok(ArmModel {
                action: d.action_labels[a].clone(),
                coefficients: m.coefficients,
                training_rows: m.training_rows,
                ridge: m.ridge,
            })
        })
        .collect()
}

fn write_assignments(dir: &Path, d: &Dataset, pols: &[PolicyAssignment]) -> Result<()> {
    let mut header = vec!["unit_id".to_string()];
    header.extend(pols.iter().map(|p| format!("action_{}", p.preference)));
    for p in pols {
        header.extend(d.action_labels.iter().map(|l| format!("u_{}_{l}", p.preference)));
    }
    let rows = (0..d.n_units()).map(|i| {
        let mut r = vec![d.unit_ids[i].clone()];
        r.extend(pols.iter().map(|p| d.action_labels[p.actions[i]].clone()));
        for p in pols {
            r.extend((0..d.n_actions).map(|a| p.utility[(i, a)].to_string()));
        }
        r
    });
    write_csv(&dir.join(ASSIGNMENTS_FILE), &header, rows)
}

fn write_moments(dir: &Path, d: &Dataset, m: &ArmMoments) -> Result<()> {
    let header: Vec<String> = ["unit_id", "arm", "mu", "sigma"].map(String::from).to_vec();
    let rows = (0..d.n_units()).flat_map(|i| {
        (0..d.n_actions).map(move |a| {
            vec![
                d.unit_ids[i].clone(),
                d.action_labels[a].clone(),
                m.mu[(i, a)].to_string(),
                m.sigma[(i, a)].to_string(),
            ]
        })
    });
    write_csv(&dir.join(MOMENTS_FILE), &header, rows)
}

fn write_shares(dir: &Path, labels: &[String], shares: &[PolicyShares]) -> Result<()> {
    let header: Vec<String> = ["preference", "action", "share"].map(String::from).to_vec();
    let rows = shares.iter().flat_map(|s| {
        s.shares
            .iter()
            .enumerate()
            .map(|(a, v)| vec![s.policy.clone(), labels[a].clone(), v.to_string()])
    });
    write_csv(&dir.join(SHARES_FILE), &header, rows)
}

/// Fit moments and assign actions for every requested preference.
pub fn cmd_fit(cfg: &RunConfig) -> Result<RunReport> {
    cfg.check()?;
    let (d, mut warnings) = load_input(cfg)?;
    let floor = cfg
        .variance_floor
        .unwrap_or_else(|| default_variance_floor(&d.outcomes));
    let moments = build_arm_moments(&d, &cfg.learner, floor)?;
    let prefs = unique_preferences(&cfg.preferences);
    let pols: Vec<PolicyAssignment> = prefs.iter().map(|&p| assign_policy(&moments, p)).collect();

    if moments.clamped_count > 0 {
        warnings.push(format!(
            "{} conditional variance cells clamped to the floor {floor:e}",
            moments.clamped_count
        ));
    }
    for p in &pols {
        if p.negative_mean_units > 0 {
            warnings.push(format!(
                "{}: {} units have a negative estimated mean; risk-adjusted ranking is fragile there",
                p.preference, p.negative_mean_units
            ));
        }
        if p.ties_broken > 0 {
            warnings.push(format!(
                "{}: {} ties broken toward the smallest action",
                p.preference, p.ties_broken
            ));
        }
    }

    let dir = &cfg.outdir;
    ensure_dir(dir)?;
    let shares: Vec<PolicyShares> = pols
        .iter()
        .map(|p| PolicyShares { policy: p.preference.to_string(), shares: p.shares() })
        .collect();
    write_assignments(dir, &d, &pols)?;
    write_moments(dir, &d, &moments)?;
    write_shares(dir, &d.action_labels, &shares)?;

    let report = RunReport {
        command: "fit".into(),
        n_units: d.n_units(),
        n_actions: d.n_actions,
        action_labels: d.action_labels.clone(),
        shares,
        clamped_cells: Some(moments.clamped_count),
        mean_models: mean_models(&d, cfg)?,
        warnings,
        ..Default::default()
    };
    write_json(&dir.join("fit_report.json"), &report)?;

    let mut manifest = Manifest::new("fit", cfg.hash(), Some(cfg.input_path()?))?;
    for name in [ASSIGNMENTS_FILE, MOMENTS_FILE, SHARES_FILE, "fit_report.json"] {
        manifest.add(dir, name)?;
    }
    manifest.write(dir)?;
    Ok(report)
}

/// Reads `action_<label>` columns of an assignment file, aligned to `d` by unit id.
pub fn read_assignments(path: &Path, d: &Dataset) -> Result<Vec<Policy>> {
    let file = fs::File::open(path).map_err(|e| OplError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "unit_id")
        .ok_or_else(|| OplError::MissingColumn("unit_id".into()))?;
    let cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.strip_prefix("action_").map(|l| (c, l.to_string())))
        .collect();
    if cols.is_empty() {
        return Err(OplError::MissingColumn("action_<policy>".into()));
    }
    let index: HashMap<&str, usize> =
        d.unit_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut actions = vec![vec![usize::MAX; d.n_units()]; cols.len()];
    let mut seen = 0usize;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let id = rec.get(id_col).unwrap_or("").trim();
        let &i = index.get(id).ok_or_else(|| OplError::BadCell {
            row,
            column: "unit_id".into(),
            message: format!("unit {id:?} is not in the dataset"),
        })?;
        if actions[0][i] != usize::MAX {
            return Err(OplError::BadCell {
                row,
                column: "unit_id".into(),
                message: format!("duplicate unit {id:?}"),
            });
        }
        seen += 1;
        for (p, (c, _)) in cols.iter().enumerate() {
            let label = rec.get(*c).unwrap_or("").trim();
            actions[p][i] = d.action_index(label).ok_or_else(|| OplError::BadCell {
                row,
                column: headers[*c].to_string(),
                message: format!("unknown action {label:?}"),
            })?;
        }
    }
    if seen != d.n_units() {
        return Err(OplError::InvalidArgument(format!(
            "assignment file covers {seen} of {} units",
            d.n_units()
        )));
    }
    Ok(cols
        .into_iter()
        .zip(actions)
        .map(|((_, label), a)| Policy::new(label, a))
        .collect())
}

/// Welfare of each assigned policy under RA, IPW,
/// DR and, with a sidecar, the true potential outcomes.
pub fn cmd_evaluate(cfg: &RunConfig, assignments: &Path) -> Result<RunReport> {
    cfg.check()?;
    let (d, mut warnings) = load_input(cfg)?;
    let mut policies = read_assignments(assignments, &d)?;
    let q_hat = estimate_conditional_means(&d, &cfg.learner)?;
    if !policies.iter().any(|p| p.label == FB_LABEL) {
        let fb = (0..d.n_units()).map(|i| row_argmax(&q_hat, i).0).collect();
        policies.insert(0, Policy::new(FB_LABEL, fb));
    }

    let mut failed_checks = Vec::new();
    let logit = fit_mnlogit(&d.features, &d.actions, d.n_actions, &cfg.logit)?;
    if !logit.converged {
        let msg = format!(
            "propensity model did not converge in {} iterations (gradient {:.3e})",
            logit.iterations, logit.final_gradient_norm
        );
        if cfg.allow_unconverged {
            warnings.push(msg);
        } else {
            failed_checks.push(msg);
        }
    }
    let raw = predict_proba(&logit, &d.features)?;
    let prop = clip_propensities(&raw, cfg.clip[0], cfg.clip[1])?;
    if prop.clipped_count > 0 {
        warnings.push(format!(
            "{} propensity entries clipped into [{}, {}]",
            prop.clipped_count, cfg.clip[0], cfg.clip[1]
        ));
    }

    let truth = match &cfg.truth {
        Some(p) => Some(read_potential_outcomes(p, &d)?),
        None => None,
    };
    let mut estimators: Vec<Estimator> = Vec::new();
    for &e in &cfg.estimators {
        if e == Estimator::True && truth.is_none() {
            warnings.push("TRUE values need a potential-outcome sidecar (--truth); skipped".into());
        } else if !estimators.contains(&e) {
            estimators.push(e);
        }
    }
    if truth.is_some() && !estimators.contains(&Estimator::True) {
        estimators.push(Estimator::True);
    }

    let estimate = |e: Estimator, pol: &Policy| -> Result<ValueEstimate> {
        match e {
            Estimator::Ra => value_ra(&q_hat, pol),
            Estimator::Ipw => value_ipw(&d, pol, &prop),
            Estimator::Dr => value_dr(&d, pol, &q_hat, &prop),
            Estimator::True => {
                let y = truth.as_ref().expect("checked above");
                let terms: Vec<f64> =
                    pol.actions.iter().enumerate().map(|(i, &a)| y[(i, a)]).collect();
                Ok(ValueEstimate { estimator: Estimator::True, policy_label: pol.label.clone(), value: mean(&terms) })
            }
        }
    };
    let mut values = Vec::new();
    for &e in &estimators {
        let fb = estimate(e, &policies[policies.iter().position(|p| p.label == FB_LABEL).unwrap()])?;
        for pol in &policies {
            let v = estimate(e, pol)?;
            values.push(ValueRow {
                policy_label: v.policy_label.clone(),
                estimator: e,
                value: v.value,
                regret_vs_fb: Some(regret(&fb, &v)?),
            });
        }
    }

    let dir = &cfg.outdir;
    ensure_dir(dir)?;
    write_json(&dir.join(VALUES_JSON), &values)?;
    let mut artifacts = vec![VALUES_JSON.to_string()];
    if cfg.format == TableFormat::Csv {
        let header: Vec<String> =
            ["policy_label", "estimator", "value", "regret_vs_fb"].map(String::from).to_vec();
        let rows = values.iter().map(|v| {
            vec![
                v.policy_label.clone(),
                v.estimator.to_string(),
                v.value.to_string(),
                v.regret_vs_fb.map(|r| r.to_string()).unwrap_or_default(),
            ]
        });
        write_csv(&dir.join(VALUES_CSV), &header, rows)?;
        artifacts.push(VALUES_CSV.into());
    }

    let report = RunReport {
        command: "evaluate".into(),
        n_units: d.n_units(),
        n_actions: d.n_actions,
        action_labels: d.action_labels.clone(),
        shares: policies
            .iter()
            .map(|p| PolicyShares { policy: p.label.clone(), shares: shares_of(&p.actions, d.n_actions) })
            .collect(),
        values,
        clipped_propensities: Some(prop.clipped_count),
        mean_models: mean_models(&d, cfg)?,
        propensity_model: Some(PropensityDiagnostics {
            converged: logit.converged,
            iterations: logit.iterations,
            final_gradient_norm: logit.final_gradient_norm,
            coefficients: logit.coefficients.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }),
        warnings,
        failed_checks,
        ..Default::default()
    };
    write_json(&dir.join("evaluate_report.json"), &report)?;
    artifacts.push("evaluate_report.json".into());

    let mut manifest = Manifest::new("evaluate", cfg.hash(), Some(cfg.input_path()?))?;
    for name in &artifacts {
        manifest.add(dir, name)?;
    }
    manifest.write(dir)?;
    Ok(report)
}

fn shares_of(actions: &[usize], n_actions: usize) -> Vec<f64> {
    let mut c = vec![0usize; n_actions];
    for &a in actions {
        c[a] += 1;
    }
    c.into_iter().map(|k| k as f64 / actions.len() as f64).collect()
}

/// Draws a synthetic dataset and its potential-outcome sidecar.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunReport> {
    let mut spec = cfg
        .simulate
        .clone()
        .ok_or_else(|| OplError::Config("simulate needs a [simulate] section".into()))?;
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    let od = generate(&spec)?;
    let dir = &cfg.outdir;
    ensure_dir(dir)?;
    write_dataset(&od.dataset, dir.join(DATASET_FILE))?;
    write_sidecar(&od, dir.join(TRUTH_FILE))?;
    let d = &od.dataset;
    let report = RunReport {
        command: "simulate".into(),
        n_units: d.n_units(),
        n_actions: d.n_actions,
        action_labels: d.action_labels.clone(),
        shares: vec![PolicyShares { policy: "observed".into(), shares: shares_of(&d.actions, d.n_actions) }],
        ..Default::default()
    };
    let mut manifest = Manifest::new("simulate", cfg.hash(), None)?;
    manifest.add(dir, DATASET_FILE)?;
    manifest.add(dir, TRUTH_FILE)?;
    manifest.write(dir)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    shares: &'a [PolicyShares],
    values: &'a [ValueRow],
}

/// Scatter data and SVGs per preference, the share table, and a value/regret
/// summary when an evaluation has been run in the same directory.
pub fn cmd_report(run_dir: &Path) -> Result<RunReport> {
    let assignments_path = run_dir.join(ASSIGNMENTS_FILE);
    let moments_path = run_dir.join(MOMENTS_FILE);
    for p in [&assignments_path, &moments_path] {
        if !p.exists() {
            return Err(OplError::InvalidArgument(format!(
                "missing artifact {} (run `fit` first)",
                p.display()
            )));
        }
    }

    let mut labels: Vec<String> = Vec::new();
    let mut moments: HashMap<(String, String), (f64, f64)> = HashMap::new();
    let mut r = csv::Reader::from_path(&moments_path)?;
    let mut first_unit: Option<String> = None;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize, name: &str| -> Result<f64> {
            rec.get(c).unwrap_or("").parse().map_err(|_| OplError::BadCell {
                row: k + 1,
                column: name.into(),
                message: "non-numeric value".into(),
            })
        };
        let unit = rec.get(0).unwrap_or("").to_string();
        let arm = rec.get(1).unwrap_or("").to_string();
        if first_unit.get_or_insert_with(|| unit.clone()) == &unit {
            labels.push(arm.clone());
        }
        moments.insert((unit, arm), (num(2, "mu")?, num(3, "sigma")?));
    }

    let mut r = csv::Reader::from_path(&assignments_path)?;
    let headers = r.headers()?.clone();
    let pref_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.strip_prefix("action_").map(|p| (c, p.to_string())))
        .collect();
    let records: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(OplError::EmptyInput);
    }

    let mut artifacts = Vec::new();
    let mut shares = Vec::new();
    for (c, pref) in &pref_cols {
        let mut rows = Vec::with_capacity(records.len());
        let mut points = Vec::with_capacity(records.len());
        let mut counts = vec![0usize; labels.len()];
        for (k, rec) in records.iter().enumerate() {
            let unit = rec.get(0).unwrap_or("").to_string();
            let label = rec.get(*c).unwrap_or("").to_string();
            let a = labels.iter().position(|l| *l == label).ok_or_else(|| OplError::BadCell {
                row: k + 1,
                column: headers[*c].to_string(),
                message: format!("unknown action {label:?}"),
            })?;
            let &(mu, sigma) = moments.get(&(unit.clone(), label.clone())).ok_or_else(|| {
                OplError::InvalidArgument(format!("no moments for unit {unit:?}, arm {label:?}"))
            })?;
            counts[a] += 1;
            rows.push(vec![unit, label, mu.to_string(), sigma.to_string()]);
            points.push(ScatterPoint { sigma, mu, action: a });
        }
        let csv_name = format!("scatter_{pref}.csv");
        let svg_name = format!("scatter_{pref}.svg");
        let header: Vec<String> = ["unit_id", "action", "mu", "sigma"].map(String::from).to_vec();
        write_csv(&run_dir.join(&csv_name), &header, rows)?;
        write_text(
            &run_dir.join(&svg_name),
            &scatter_svg(&format!("Optimal policy ({pref})"), &points, &labels),
        )?;
        artifacts.push(csv_name);
        artifacts.push(svg_name);
        let n = records.len() as f64;
        shares.push(PolicyShares {
            policy: pref.clone(),
            shares: counts.into_iter().map(|k| k as f64 / n).collect(),
        });
    }
    write_shares(run_dir, &labels, &shares)?;
    artifacts.push(SHARES_FILE.into());

    let values_path = run_dir.join(VALUES_JSON);
    let values: Vec<ValueRow> = if values_path.exists() {
        let text = fs::read_to_string(&values_path).map_err(|e| OplError::io(&values_path, e))?;
        serde_json::from_str(&text)?
    } else {
        Vec::new()
    };
    write_json(&run_dir.join(SUMMARY_FILE), &Summary { shares: &shares, values: &values })?;
    artifacts.push(SUMMARY_FILE.into());

    let mut manifest = Manifest::new(
        "report",
        super::manifest::sha256_hex(run_dir.to_string_lossy().as_bytes()),
        Some(&assignments_path),
    )?;
    for name in &artifacts {
        manifest.add(run_dir, name)?;
    }
    manifest.write(run_dir)?;

    Ok(RunReport {
        command: "report".into(),
        n_units: records.len(),
        n_actions: labels.len(),
        action_labels: labels,
        shares,
        values,
        ..Default::default()
    })
}

/// Default location of the assignment file for a run directory.
pub fn default_assignments(outdir: &Path) -> PathBuf {
    outdir.join(ASSIGNMENTS_FILE)
}
