//! Versioned, self-describing fit artifact (JSON).

use crate::config::{hash_json, ModelConfig};
use crate::error::{CliError, CliResult};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;
use vcsde::basis::DesignSet;
use vcsde::estimate::{Convergence, FitResult, Model};
use vcsde::sde::Family;

pub const FORMAT: &str = "vcsde-fit";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format: String,
    pub version: u32,
    /// Hash of the model section that produced the fit.
    pub model_hash: String,
    pub model: ModelConfig,
    pub family: Family,
    pub n_obs: usize,
    pub n_series: usize,
    pub fixed_labels: Vec<String>,
    pub random_labels: Vec<String>,
    pub block_labels: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Row-major joint covariance of `(α, β)`.
    pub covariance: Vec<Vec<f64>>,
    pub marginal_nll: f64,
    pub penalized_nll: f64,
    pub data_nll: f64,
    pub fixed: Vec<usize>,
    pub convergence: Convergence,
}

fn col_labels(label: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![label.to_string()]
    } else {
        (1..=n).map(|j| format!("{label}[{j}]")).collect()
    }
}

pub fn coefficient_labels(d: &DesignSet) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut fixed = vec![String::new(); d.n_fixed()];
    let mut random = vec![String::new(); d.n_random()];
    for t in &d.terms {
        for (c, l) in t.fixed_cols.clone().zip(col_labels(&t.label, t.fixed_cols.len())) {
            fixed[c] = l;
        }
        for (c, l) in t.random_cols.clone().zip(col_labels(&t.label, t.random_cols.len())) {
            random[c] = l;
        }
    }
    let blocks = d.blocks.iter().map(|b| d.terms[b.term].label.clone()).collect();
    (fixed, random, blocks)
}

impl FitArtifact {
    pub fn new(model_cfg: &ModelConfig, model: &Model, fit: &FitResult) -> Self {
        let (fixed_labels, random_labels, block_labels) = coefficient_labels(&model.design);
        let c = &fit.covariance;
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model_hash: hash_json(model_cfg),
            model: model_cfg.clone(),
            family: model.family,
            n_obs: model.data.len(),
            n_series: model.data.n_series(),
            fixed_labels,
            random_labels,
            block_labels,
            alpha: fit.alpha.clone(),
            beta: fit.beta.clone(),
            lambda: fit.lambda.clone(),
            covariance: (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect(),
            marginal_nll: fit.marginal_nll,
            penalized_nll: fit.penalized_nll,
            data_nll: fit.data_nll,
            fixed: fit.fixed.clone(),
            convergence: fit.convergence.clone(),
        }
    }

    pub fn fit_result(&self) -> FitResult {
        let n = self.covariance.len();
        FitResult {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            lambda: self.lambda.clone(),
            covariance: DMatrix::from_fn(n, n, |i, j| self.covariance[i][j]),
            marginal_nll: self.marginal_nll,
            penalized_nll: self.penalized_nll,
            data_nll: self.data_nll,
            fixed: self.fixed.clone(),
            convergence: self.convergence.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Numerical(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read fit artifact {}: {e}", path.display())))?;
        let head: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("fit artifact is not JSON: {e}")))?;
        if head.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(CliError::Input(format!("{} is not a {FORMAT} artifact", path.display())));
        }
        let v = head.get("version").and_then(|v| v.as_u64());
        if v != Some(VERSION as u64) {
            return Err(CliError::Input(format!("fit artifact version {v:?} is not supported (expected {VERSION})")));
        }
        serde_json::from_value(head).map_err(|e| CliError::Input(format!("malformed fit artifact: {e}")))
    }

    /// Fails when the artifact was produced by a different model section.
    pub fn check_model(&self, model_cfg: &ModelConfig) -> CliResult<()> {
        if hash_json(model_cfg) != self.model_hash {
            return Err(CliError::Input("fit artifact was produced by a different model configuration".into()));
        }
        Ok(())
    }
}
