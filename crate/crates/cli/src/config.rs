//! Run configuration (JSON).

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use vcsde::basis::Formula;
use vcsde::estimate::{FitConfig, Observation};
use vcsde::ppc::Sidedness;
use vcsde::sde::Family;
use vcsde::simstudy::StudyConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bands: Vec<BandConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppc: Option<PpcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_study: Option<StudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Fit artifact read by `band`, `ppc`, `simulate` and `smooth-track`;
    /// defaults to `<out>/fit.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
    /// Units of named quantities, echoed into every output table.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub units: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default = "default_observation")]
    pub observation: Observation,
    pub formulas: Vec<Formula>,
    pub data: DataConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_observation() -> Observation {
    Observation::Exact
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Natural-scale starting values of parameter intercepts.
    #[serde(default)]
    pub intercepts: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_lambda: Option<Vec<f64>>,
    /// Fixed-effect labels held at their starting values.
    #[serde(default)]
    pub fixed: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub fd_step: f64,
    pub max_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            outer_tol: f.outer_tol,
            inner_tol: f.inner_tol,
            max_outer: f.max_outer,
            max_inner: f.max_inner,
            fd_step: f.fd_step,
            max_step: f.max_step,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFormat {
    #[default]
    Seconds,
    Iso8601,
}

/// Per-row observation error, from one of the usual telemetry encodings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObsErrorConfig {
    /// Semi-major, semi-minor axis columns and orientation (degrees from north).
    Ellipse { semi_major: String, semi_minor: String, orientation: String },
    /// Goniometer signal strength (dB) mapped to a circular error radius.
    Goniometer { db: String },
    /// Circular error radius column.
    Radius { radius: String },
    /// Raw covariance entries.
    Covariance { xx: String, xy: String, yy: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureConfig {
    /// Exposure start per series id, in the format of the time column.
    pub start: BTreeMap<String, String>,
    /// 0/1 column set to 1 from the exposure start onwards.
    #[serde(default = "default_indicator")]
    pub indicator: String,
    /// Optional column holding the time since exposure (0 before it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<String>,
}

fn default_indicator() -> String {
    "exposed".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub time: String,
    #[serde(default)]
    pub time_format: TimeFormat,
    /// Seconds per model time unit (3600 for hours, 15 for 15-s steps).
    #[serde(default = "one")]
    pub time_unit: f64,
    /// Columns whose values, joined by `/`, identify a series.
    #[serde(default)]
    pub series: Vec<String>,
    pub coords: Vec<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub factors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ObsErrorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<ExposureConfig>,
    /// Name of a derived column with the elapsed fraction of each series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<String>,
    /// Column whose values group series in the ingestion summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub name: String,
    /// Term labels summed on the link scale.
    #[serde(default)]
    pub terms: Vec<String>,
    /// Parameter name, as an alternative to `terms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    pub covariate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub levels: BTreeMap<String, String>,
}

fn default_grid() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}
fn default_draws() -> usize {
    1000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpcSection {
    /// Series names used as templates; all series when empty.
    #[serde(default)]
    pub template: Vec<String>,
    /// Statistic names; all six when empty.
    #[serde(default)]
    pub stats: Vec<String>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub sidedness: Sidedness,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    30
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "one_usize")]
    pub replicates: usize,
    /// Constant natural-scale parameters; when absent the fitted model is
    /// simulated over the observed time grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<Vec<f64>>,
}

fn one_usize() -> usize {
    1
}

impl ModelConfig {
    pub fn fit_config(&self, fixed: Vec<usize>) -> FitConfig {
        let o = &self.optimizer;
        FitConfig {
            outer_tol: o.outer_tol,
            inner_tol: o.inner_tol,
            max_outer: o.max_outer,
            max_inner: o.max_inner,
            fd_step: o.fd_step,
            max_step: o.max_step,
            alpha_init: self.init.alpha.clone(),
            intercept_init: self.init.intercepts.clone(),
            log_lambda_init: self.init.log_lambda.clone(),
            fixed,
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = cfg.model.as_mut() {
            fix(&mut m.data.path);
        }
        if let Some(o) = cfg.out.as_mut() {
            fix(o);
        }
        if let Some(a) = cfg.artifact.as_mut() {
            fix(a);
        }
        Ok(cfg)
    }

    pub fn model(&self) -> CliResult<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| CliError::Input("config has no `model` section".into()))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::Input("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn artifact_path(&self) -> PathBuf {
        self.artifact.clone().unwrap_or_else(|| self.out_dir().join("fit.json"))
    }

    /// Hash of everything that shapes the results; output locations excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.artifact = None;
        hash_json(&c)
    }
}

pub fn hash_json<T: Serialize>(v: &T) -> String {
    let text = serde_json::to_string(v).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
