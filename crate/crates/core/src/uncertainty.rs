//! Posterior simulation from `N(γ̂, Σ̂)` and simulation-based pointwise and
//! simultaneous confidence bands.

use crate::basis::Scenario;
use crate::error::{Error, Result};
use crate::estimate::{FitResult, Model};
use crate::sde::Link;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_DRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandType {
    Pointwise,
    Simultaneous,
}

/// What a band describes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTarget {
    /// Sum of the listed terms on the link scale (e.g. a difference smooth).
    Terms(Vec<usize>),
    /// Full parameter on the natural scale, other covariates held fixed.
    Parameter(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub target: BandTarget,
    pub grid_covariate: String,
    pub grid: Vec<f64>,
    pub level: f64,
    pub draws: usize,
    pub seed: u64,
    /// Values of other numeric covariates (defaults: data medians).
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    /// Factor levels for by-factor smooths and random intercepts.
    #[serde(default)]
    pub levels: BTreeMap<String, String>,
}

impl BandSpec {
    pub fn new(target: BandTarget, grid_covariate: &str, grid: Vec<f64>, level: f64, seed: u64) -> Self {
        Self {
            target,
            grid_covariate: grid_covariate.to_string(),
            grid,
            level,
            draws: DEFAULT_DRAWS,
            seed,
            values: BTreeMap::new(),
            levels: BTreeMap::new(),
        }
    }

    pub fn with_draws(mut self, k: usize) -> Self {
        self.draws = k;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub band_type: BandType,
    pub target: String,
    /// Critical value of the max statistic (simultaneous bands only).
    pub critical_value: Option<f64>,
    pub warnings: Vec<String>,
}

impl Band {
    /// Gridpoints whose interval excludes zero.
    pub fn zero_excluded(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&m| self.lower[m] > 0.0 || self.upper[m] < 0.0).collect()
    }

    pub fn contains(&self, f: &[f64]) -> bool {
        f.iter().enumerate().all(|(m, v)| self.lower[m] <= *v && *v <= self.upper[m])
    }

    pub fn contains_band(&self, other: &Band) -> bool {
        (0..self.grid.len()).all(|m| self.lower[m] <= other.lower[m] && other.upper[m] <= self.upper[m])
    }

    /// Fraction of gridpoints where `f` lies inside the band.
    pub fn pointwise_coverage(&self, f: &[f64]) -> f64 {
        let inside = f.iter().enumerate().filter(|(m, v)| self.lower[*m] <= **v && **v <= self.upper[*m]).count();
        inside as f64 / f.len() as f64
    }
}

/// Symmetric square root `U D^½ Uᵀ` of a PSD matrix; negative
/// eigenvalues are clipped to zero with a warning.
pub fn symmetric_factor(cov: &DMatrix<f64>) -> (DMatrix<f64>, Vec<String>) {
    let n = cov.nrows();
    let mut warnings = Vec::new();
    if n == 0 || cov.iter().all(|v| *v == 0.0) {
        return (DMatrix::zeros(n, n), warnings);
    }
    let e = SymmetricEigen::new(0.5 * (cov + cov.transpose()));
    let tol = 1e-10 * e.eigenvalues.amax();
    if e.eigenvalues.iter().any(|&v| v < -tol) {
        let msg = "covariance has negative eigenvalues; clipped at zero".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let d = DVector::from_iterator(n, e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    (&e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose(), warnings)
}

/// `K × n` matrix of draws from `N(mean, cov)`; row `k` is draw `k`.
pub fn mvn_draws(mean: &[f64], cov: &DMatrix<f64>, k: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::InvalidInput("covariance dimension differs from the mean".into()));
    }
    let (l, warnings) = symmetric_factor(cov);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dev = &l * xi;
    let mut out = DMatrix::zeros(k, n);
    for r in 0..k {
        for c in 0..n {
            out[(r, c)] = mean[c] + dev[(c, r)];
        }
    }
    Ok((out, warnings))
}

/// Posterior draws of `γ = (α, β)` from the fitted Gaussian approximation.
pub fn posterior_draws(fit: &FitResult, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    if k < 1 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    Ok(mvn_draws(&fit.gamma(), &fit.covariance, k, seed)?.0)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&s, p)
}

/// Target evaluation matrix on the link scale and the link to apply.
fn target_matrix(model: &Model, spec: &BandSpec) -> Result<(DMatrix<f64>, Link, String)> {
    let design = &model.design;
    match &spec.target {
        BandTarget::Terms(ids) => {
            if ids.is_empty() {
                return Err(Error::InvalidInput("band target has no terms".into()));
            }
            let mut sc = Scenario::new(&spec.grid_covariate, spec.grid.clone());
            sc.numeric = spec.values.clone();
            sc.levels = spec.levels.clone();
            let labels: Result<Vec<String>> = ids.iter().map(|&i| design.term(i).map(|t| t.label.clone())).collect();
            Ok((design.terms_matrix(ids, &sc)?, Link::Identity, labels?.join(" + ")))
        }
        BandTarget::Parameter(k) => {
            if *k >= design.n_params() {
                return Err(Error::UnknownTerm(format!("parameter #{k}")));
            }
            let mut sc = Scenario::new(&spec.grid_covariate, spec.grid.clone());
            sc.numeric = crate::basis::covariate_medians(&model.data);
            sc.numeric.extend(spec.values.clone());
            sc.levels = spec.levels.clone();
            Ok((design.predict_matrix(*k, &sc)?, model.family.links()[*k], design.params[*k].clone()))
        }
    }
}

fn validate(spec: &BandSpec) -> Result<()> {
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::InvalidInput(format!("band level must lie in (0, 1), got {}", spec.level)));
    }
    if spec.draws < 2 {
        return Err(Error::InvalidInput("bands need at least two posterior draws".into()));
    }
    if spec.grid.is_empty() || spec.grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("band grid must be non-empty and finite".into()));
    }
    Ok(())
}

/// Pointwise and simultaneous bands computed from the same posterior draws.
///
/// Simultaneous bands use the max-statistic construction on the link scale;
/// they are widened where needed so they contain the pointwise band.
pub fn bands(model: &Model, fit: &FitResult, spec: &BandSpec) -> Result<(Band, Band)> {
    validate(spec)?;
    let (c, link, label) = target_matrix(model, spec)?;
    let gamma = fit.gamma();
    let (draws, mut warnings) = mvn_draws(&gamma, &fit.covariance, spec.draws, spec.seed)?;
    let yhat = &c * DVector::from_column_slice(&gamma);
    let y = &c * draws.transpose(); // M × K
    let m = spec.grid.len();
    let k = spec.draws;
    let alpha = 1.0 - spec.level;
    let degenerate = (k as f64) * alpha / 2.0 < 1.0;
    if degenerate {
        let msg = format!("only {k} draws for level {}: pointwise band uses the draw range", spec.level);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    let mut sd = vec![0.0; m];
    for i in 0..m {
        let mut row: Vec<f64> = y.row(i).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / k as f64;
        sd[i] = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt();
        row.sort_by(|a, b| a.total_cmp(b));
        if degenerate {
            lo[i] = row[0];
            hi[i] = row[k - 1];
        } else {
            lo[i] = quantile_sorted(&row, alpha / 2.0);
            hi[i] = quantile_sorted(&row, 1.0 - alpha / 2.0);
        }
    }
    // rounding noise in the draw mean counts as zero spread
    let scale = sd.iter().chain(yhat.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
    let active: Vec<usize> = (0..m).filter(|&i| sd[i] > 1e-12 * scale.max(f64::MIN_POSITIVE)).collect();
    if active.len() < m {
        let msg = format!("{} gridpoints with zero posterior SD excluded from the max statistic", m - active.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let hstat: Vec<f64> = (0..k)
        .map(|j| active.iter().map(|&i| ((y[(i, j)] - yhat[i]) / sd[i]).abs()).fold(0.0, f64::max))
        .collect();
    let q = if active.is_empty() { 0.0 } else { quantile(&hstat, spec.level) };

    let est: Vec<f64> = yhat.iter().map(|v| link.inverse(*v)).collect();
    let finish = |lower: Vec<f64>, upper: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let l: Vec<f64> = lower.iter().zip(&est).map(|(a, e)| link.inverse(*a).min(*e)).collect();
        let u: Vec<f64> = upper.iter().zip(&est).map(|(a, e)| link.inverse(*a).max(*e)).collect();
        (l, u)
    };
    let (pl, pu) = finish(lo.clone(), hi.clone());
    let sl: Vec<f64> = (0..m).map(|i| (yhat[i] - q * sd[i]).min(lo[i])).collect();
    let su: Vec<f64> = (0..m).map(|i| (yhat[i] + q * sd[i]).max(hi[i])).collect();
    let (sl, su) = finish(sl, su);
    let make = |lower, upper, band_type, cv| Band {
        grid: spec.grid.clone(),
        estimate: est.clone(),
        lower,
        upper,
        level: spec.level,
        band_type,
        target: label.clone(),
        critical_value: cv,
        warnings: warnings.clone(),
    };
    Ok((make(pl, pu, BandType::Pointwise, None), make(sl, su, BandType::Simultaneous, Some(q))))
}

pub fn pointwise_band(model: &Model, fit: &FitResult, spec: &BandSpec) -> Result<Band> {
    Ok(bands(model, fit, spec)?.0)
}

pub fn simultaneous_band(model: &Model, fit: &FitResult, spec: &BandSpec) -> Result<Band> {
    Ok(bands(model, fit, spec)?.1)
}

/// Evenly spaced grid of `m` points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn zero_covariance_draws_equal_mean() {
        let (d, _) = mvn_draws(&[1.0, -2.0], &DMatrix::zeros(2, 2), 5, 3).unwrap();
        for r in 0..5 {
            assert_eq!(d[(r, 0)], 1.0);
            assert_eq!(d[(r, 1)], -2.0);
        }
    }

    #[test]
    fn draw_moments() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 0.5]);
        let mean = [1.0, 2.0, 3.0];
        let k = 100_000;
        let (d, w) = mvn_draws(&mean, &cov, k, 11).unwrap();
        assert!(w.is_empty());
        let mut est = DMatrix::zeros(3, 3);
        let m: Vec<f64> = (0..3).map(|c| d.column(c).mean()).collect();
        for c in 0..3 {
            assert!((m[c] - mean[c]).abs() < 4.0 * (cov[(c, c)] / k as f64).sqrt());
        }
        for r in 0..k {
            for a in 0..3 {
                for b in 0..3 {
                    est[(a, b)] += (d[(r, a)] - m[a]) * (d[(r, b)] - m[b]) / (k - 1) as f64;
                }
            }
        }
        assert!((&est - &cov).norm() / cov.norm() < 0.05);
    }

    #[test]
    fn negative_eigenvalues_are_clipped() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (l, w) = symmetric_factor(&cov);
        assert_eq!(w.len(), 1);
        let back = &l * &l;
        assert!(back.symmetric_eigen().eigenvalues.min() > -1e-12);
    }
}
