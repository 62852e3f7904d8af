//! Command-line front end: `fit`, `evaluate`, `simulate` and `report`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_evaluate, cmd_fit, cmd_report, cmd_simulate, RunReport, ValueRow};
pub use config::{RunConfig, TableFormat};

use crate::error::Result;
use crate::policy::RiskPreference;

#[derive(Debug, Parser)]
#[command(name = "opl", version, about = "Optimal policy learning for multi-action treatments under risk preferences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate arm moments and assign optimal actions
    Fit,
    /// Estimate RA / IPW / DR welfare and regret of assigned policies
    Evaluate {
        /// Assignment file (defaults to <outdir>/assignments.csv)
        #[arg(long)]
        assignments: Option<PathBuf>,
        /// Potential-outcome sidecar from `simulate`, adds TRUE values
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with known potential outcomes
    Simulate,
    /// Emit scatter plots, share table and value summary for a fit run
    Report {
        /// Run directory (defaults to --outdir)
        run_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub outdir: Option<PathBuf>,
    /// Risk preference; repeat for several
    #[arg(long = "pref", global = true)]
    pub prefs: Vec<RiskPreference>,
    /// Propensity clip bounds as LOW,HIGH
    #[arg(long, global = true)]
    pub clip: Option<String>,
    #[arg(long, global = true)]
    pub variance_floor: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<TableFormat>,
}

impl CommonArgs {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        if let Some(p) = &self.outdir {
            cfg.outdir = p.clone();
        }
        if !self.prefs.is_empty() {
            cfg.preferences = self.prefs.clone();
        }
        if let Some(c) = &self.clip {
            cfg.clip = config::parse_clip(c)?;
        }
        if let Some(f) = self.variance_floor {
            cfg.variance_floor = Some(f);
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        Ok(cfg)
    }
}

fn print_report(report: &RunReport) {
    println!(
        "{}: {} units, {} actions ({})",
        report.command,
        report.n_units,
        report.n_actions,
        report.action_labels.join(", ")
    );
    for s in &report.shares {
        let parts: Vec<String> = s.shares.iter().map(|v| format!("{v:.4}")).collect();
        println!("  shares[{}] = {}", s.policy, parts.join(" "));
    }
    for v in &report.values {
        match v.regret_vs_fb {
            Some(r) => println!("  {:<4} {:<12} value {:>12.6}  regret {:>10.6}", v.estimator, v.policy_label, v.value, r),
            None => println!("  {:<4} {:<12} value {:>12.6}", v.estimator, v.policy_label, v.value),
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for f in &report.failed_checks {
        eprintln!("check failed: {f}");
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = cli.common.resolve()?;
    let report = match cli.command {
        Command::Fit => cmd_fit(&cfg)?,
        Command::Evaluate { assignments, truth } => {
            if truth.is_some() {
                cfg.truth = truth;
            }
            let path = assignments.unwrap_or_else(|| commands::default_assignments(&cfg.outdir));
            cmd_evaluate(&cfg, &path)?
        }
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Report { run_dir } => cmd_report(&run_dir.unwrap_or_else(|| cfg.outdir.clone()))?,
    };
    print_report(&report);
    Ok(report.exit_code())
}
