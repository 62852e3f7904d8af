//! Run configuration: a TOML file whose every option can be overridden by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{OplError, Result};
use crate::moments::LearnerSpec;
use crate::oracle::DgpSpec;
use crate::policy::RiskPreference;
use crate::regression::MnLogitOptions;
use crate::value::{Estimator, DEFAULT_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Column mapping. When absent the header is read as `y`, `a`, an
    /// optional `unit_id`, and every other column a feature.
    pub schema: Option<Schema>,
    pub preferences: Vec<RiskPreference>,
    pub estimators: Vec<Estimator>,
    pub learner: LearnerSpec,
    /// Defaults to `1e-8 * Var(Y)`.
    pub variance_floor: Option<f64>,
    pub clip: [f64; 2],
    pub logit: MnLogitOptions,
    pub allow_unconverged: bool,
    pub outdir: PathBuf,
    pub format: TableFormat,
    pub seed: Option<u64>,
    /// Potential-outcome sidecar; enables TRUE values in `evaluate`.
    pub truth: Option<PathBuf>,
    pub simulate: Option<DgpSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            schema: None,
            preferences: RiskPreference::ALL.to_vec(),
            estimators: vec![Estimator::Ra, Estimator::Ipw, Estimator::Dr],
            learner: LearnerSpec::Linear,
            variance_floor: None,
            clip: [DEFAULT_CLIP.0, DEFAULT_CLIP.1],
            logit: MnLogitOptions::default(),
            allow_unconverged: false,
            outdir: PathBuf::from("opl-out"),
            format: TableFormat::Json,
            seed: None,
            truth: None,
            simulate: None,
        }
    }
}

impl RunConfig {
    /// Parses a TOML config. Relative paths inside it are resolved against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| OplError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| OplError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.input.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.truth.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.outdir);
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let [low, high] = self.clip;
        if !(0.0 < low && low < high && high < 1.0) {
            return Err(OplError::Config(format!(
                "clip bounds must satisfy 0 < low < high < 1, got ({low}, {high})"
            )));
        }
        if let Some(f) = self.variance_floor {
            if !(f > 0.0) || !f.is_finite() {
                return Err(OplError::Config(format!("variance_floor must be positive, got {f}")));
            }
        }
        if self.preferences.is_empty() {
            return Err(OplError::Config("no risk preferences requested".into()));
        }
        Ok(())
    }

    pub fn input_path(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| OplError::Config("no input file (set `input` or pass --input)".into()))
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        super::manifest::sha256_hex(&json)
    }
}

/// Parses `LOW,HIGH`.
pub fn parse_clip(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || OplError::InvalidArgument(format!("--clip expects LOW,HIGH, got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let low = parts[0].parse().map_err(|_| bad())?;
    let high = parts[1].parse().map_err(|_| bad())?;
    Ok([low, high])
}
