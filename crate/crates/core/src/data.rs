//! Irregular multi-series observations with covariate columns.

use crate::error::{invalid, Error, Result};
use std::collections::BTreeMap;
use std::ops::Range;

/// Symmetric 2×2 covariance `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn isotropic(v: f64) -> Self {
        Self { xx: v, xy: 0.0, yy: v }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { xx: c * self.xx, xy: c * self.xy, yy: c * self.yy }
    }

    /// Eigenvalues in decreasing order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * self.trace();
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m + d, m - d)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.xx.is_finite()
            && self.xy.is_finite()
            && self.yy.is_finite()
            && self.eigenvalues().1 >= -tol * (1.0 + self.trace().abs())
    }
}

/// A covariate column: numeric values or factor codes.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Factor { levels: Vec<String>, codes: Vec<usize> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a factor from string labels, levels in order of first appearance.
    pub fn factor_from_labels<S: AsRef<str>>(labels: &[S]) -> Column {
        let mut levels: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l.to_string()).or_insert_with(|| {
                    levels.push(l.to_string());
                    levels.len() - 1
                })
            })
            .collect();
        Column::Factor { levels, codes }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Factor { levels, codes } => Column::Factor {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        }
    }
}

/// One or more irregular time series stored row-wise.
///
/// Rows of a series are contiguous and time-ordered. `coords` holds one
/// vector per observed dimension; a NaN coordinate marks a missing
/// observation (only meaningful to the state-space likelihood).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesData {
    pub series_names: Vec<String>,
    pub series: Vec<usize>,
    pub time: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
    pub covariates: BTreeMap<String, Column>,
    pub obs_cov: Option<Vec<Cov2>>,
}

impl SeriesData {
    /// Single series with 1-D observations.
    pub fn single(time: Vec<f64>, z: Vec<f64>) -> Self {
        let n = time.len();
        Self {
            series_names: vec!["1".to_string()],
            series: vec![0; n],
            time,
            coords: vec![z],
            covariates: BTreeMap::new(),
            obs_cov: None,
        }
    }

    pub fn new(series_labels: &[String], time: Vec<f64>, coords: Vec<Vec<f64>>) -> Self {
        let (series_names, series) = match Column::factor_from_labels(series_labels) {
            Column::Factor { levels, codes } => (levels, codes),
            Column::Numeric(_) => unreachable!(),
        };
        Self { series_names, series, time, coords, covariates: BTreeMap::new(), obs_cov: None }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn n_series(&self) -> usize {
        self.series_names.len()
    }

    pub fn with_column(mut self, name: &str, col: Column) -> Self {
        self.covariates.insert(name.to_string(), col);
        self
    }

    pub fn with_obs_cov(mut self, cov: Vec<Cov2>) -> Self {
        self.obs_cov = Some(cov);
        self
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.covariates.get(name) {
            Some(Column::Numeric(v)) => Ok(v),
            Some(Column::Factor { .. }) => invalid(format!("column `{name}` is a factor, expected numeric")),
            None => Err(Error::MissingColumn(name.to_string())),
        }
    }

    pub fn factor(&self, name: &str) -> Result<(&[String], &[usize])> {
        match self.covariates.get(name) {
            Some(Column::Factor { levels, codes }) => Ok((levels, codes)),
            Some(Column::Numeric(_)) => invalid(format!("column `{name}` is numeric, expected a factor")),
            None => Err(Error::MissingColumn(name.to_string())),
        }
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.covariates.get(name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Contiguous row ranges, one per series run.
    pub fn series_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.series[i] != self.series[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Checks the structural invariants: aligned column lengths, contiguous
    /// series, strictly increasing times within a series, finite times and
    /// PSD observation covariances.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.series.len() != n {
            return invalid("series id column length differs from time column");
        }
        if self.coords.is_empty() {
            return invalid("no observation coordinates");
        }
        for c in &self.coords {
            if c.len() != n {
                return invalid("coordinate column length differs from time column");
            }
        }
        for (name, col) in &self.covariates {
            if col.len() != n {
                return invalid(format!("covariate `{name}` has {} rows, expected {n}", col.len()));
            }
        }
        if let Some(cov) = &self.obs_cov {
            if cov.len() != n {
                return invalid("observation covariance length differs from time column");
            }
            if let Some(i) = cov.iter().position(|c| !c.is_psd(1e-12)) {
                return invalid(format!("observation covariance at row {i} is not symmetric PSD"));
            }
        }
        if let Some(&s) = self.series.iter().find(|&&s| s >= self.n_series()) {
            return invalid(format!("series code {s} has no name"));
        }
        let mut seen = vec![false; self.n_series()];
        for r in self.series_ranges() {
            let s = self.series[r.start];
            if seen[s] {
                return invalid(format!("rows of series `{}` are not contiguous", self.series_names[s]));
            }
            seen[s] = true;
            for i in r.clone() {
                if !self.time[i].is_finite() {
                    return invalid(format!("non-finite time at row {i}"));
                }
                if i > r.start && self.time[i] <= self.time[i - 1] {
                    return invalid(format!(
                        "times not strictly increasing in series `{}` at row {i}",
                        self.series_names[s]
                    ));
                }
            }
        }
        Ok(())
    }

    /// Rows belonging to the given series codes, in their original order.
    pub fn select_series(&self, codes: &[usize]) -> SeriesData {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| codes.contains(&self.series[i])).collect();
        self.select_rows(&rows)
    }

    pub fn select_rows(&self, rows: &[usize]) -> SeriesData {
        SeriesData {
            series_names: self.series_names.clone(),
            series: rows.iter().map(|&i| self.series[i]).collect(),
            time: rows.iter().map(|&i| self.time[i]).collect(),
            coords: self.coords.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            covariates: self.covariates.iter().map(|(k, c)| (k.clone(), c.select(rows))).collect(),
            obs_cov: self.obs_cov.as_ref().map(|v| rows.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Concatenates series from two datasets, renaming codes of `other`.
    pub fn append(&self, other: &SeriesData) -> Result<SeriesData> {
        if self.dim() != other.dim() {
            return invalid("cannot append datasets of different dimension");
        }
        let mut out = self.clone();
        let offset = self.n_series();
        out.series_names.extend(other.series_names.iter().cloned());
        out.series.extend(other.series.iter().map(|s| s + offset));
        out.time.extend_from_slice(&other.time);
        for (a, b) in out.coords.iter_mut().zip(&other.coords) {
            a.extend_from_slice(b);
        }
        for (name, col) in out.covariates.iter_mut() {
            match (col, other.covariates.get(name)) {
                (Column::Numeric(a), Some(Column::Numeric(b))) => a.extend_from_slice(b),
                (Column::Factor { levels, codes }, Some(Column::Factor { levels: lb, codes: cb })) => {
                    for &c in cb {
                        let label = &lb[c];
                        let code = match levels.iter().position(|l| l == label) {
                            Some(p) => p,
                            None => {
                                levels.push(label.clone());
                                levels.len() - 1
                            }
                        };
                        codes.push(code);
                    }
                }
                _ => return invalid(format!("column `{name}` missing or mismatched in appended data")),
            }
        }
        out.obs_cov = match (&self.obs_cov, &other.obs_cov) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => return invalid("observation covariance present in only one dataset"),
        };
        Ok(out)
    }
}
