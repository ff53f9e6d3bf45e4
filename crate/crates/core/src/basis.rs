//! Penalized B-spline bases, random-intercept blocks and full design sets.
//!
//! Every parameter of the SDE gets an additive linear predictor
//! `η = Xα + Zβ`. Unpenalized columns (intercepts, linear effects) go to the
//! fixed-effect matrix `X`; spline and random-intercept columns go to `Z`,
//! each block carrying its own penalty matrix and smoothing parameter.

use crate::data::{Column, SeriesData};
use crate::error::{invalid, Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Intercept,
    Linear,
    Spline,
    RandomIntercept,
}

fn default_basis_dim() -> usize {
    10
}
fn default_penalty_order() -> usize {
    2
}
fn default_degree() -> usize {
    3
}
fn default_true() -> bool {
    true
}

/// One additive term of a parameter formula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: TermKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate: Option<String>,
    #[serde(default = "default_basis_dim")]
    pub basis_dim: usize,
    /// Binary 0/1 column multiplying the smooth (difference smooth).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by: Option<String>,
    /// Factor column: one smooth block per level with active rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_factor: Option<String>,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Weakly penalize the null space of the smoothing penalty.
    #[serde(default = "default_true")]
    pub shrinkage: bool,
}

impl TermSpec {
    fn base(kind: TermKind, covariate: Option<&str>) -> Self {
        Self {
            kind,
            covariate: covariate.map(str::to_string),
            basis_dim: default_basis_dim(),
            by: None,
            by_factor: None,
            penalty_order: default_penalty_order(),
            degree: default_degree(),
            shrinkage: true,
        }
    }

    pub fn intercept() -> Self {
        Self::base(TermKind::Intercept, None)
    }

    pub fn linear(covariate: &str) -> Self {
        Self::base(TermKind::Linear, Some(covariate))
    }

    pub fn spline(covariate: &str, basis_dim: usize) -> Self {
        Self { basis_dim, ..Self::base(TermKind::Spline, Some(covariate)) }
    }

    pub fn random_intercept(factor: &str) -> Self {
        Self::base(TermKind::RandomIntercept, Some(factor))
    }

    pub fn by(mut self, indicator: &str) -> Self {
        self.by = Some(indicator.to_string());
        self
    }

    pub fn by_factor(mut self, factor: &str) -> Self {
        self.by_factor = Some(factor.to_string());
        self
    }

    pub fn without_shrinkage(mut self) -> Self {
        self.shrinkage = false;
        self
    }

    pub fn with_penalty_order(mut self, order: usize) -> Self {
        self.penalty_order = order;
        self
    }

    fn covariate_name(&self) -> Result<&str> {
        self.covariate
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{:?} term requires a covariate", self.kind)))
    }
}

/// Additive formula for one SDE parameter (on the link scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Formula {
    pub parameter: String,
    pub terms: Vec<TermSpec>,
}

impl Formula {
    pub fn new(parameter: &str, terms: Vec<TermSpec>) -> Self {
        Self { parameter: parameter.to_string(), terms }
    }

    pub fn intercept_only(parameter: &str) -> Self {
        Self::new(parameter, vec![TermSpec::intercept()])
    }
}

/// Raw B-spline basis with its difference penalty.
#[derive(Clone, Debug)]
pub struct SplineBasis {
    /// `n × k` basis evaluations.
    pub basis: DMatrix<f64>,
    /// `k × k` penalty Gram matrix `DᵀD`.
    pub penalty: DMatrix<f64>,
    pub knots: Vec<f64>,
    pub degree: usize,
}

/// Equally spaced knots over `[lo, hi]` with `degree` extra knots per side.
pub fn spline_knots(lo: f64, hi: f64, k: usize, degree: usize) -> Vec<f64> {
    let intervals = k - degree;
    let h = (hi - lo) / intervals as f64;
    let mut knots: Vec<f64> = (0..k + degree + 1)
        .map(|j| lo + (j as f64 - degree as f64) * h)
        .collect();
    knots[degree] = lo;
    knots[k] = hi;
    knots
}

/// Evaluates the `k` B-spline basis functions at `x` (Cox–de Boor).
///
/// The interval `[knots[degree], knots[k]]` is closed on the right so the
/// partition of unity holds at the upper end of the data range. Outside the
/// extended knot vector every function is zero.
pub fn bspline_row(x: f64, knots: &[f64], degree: usize, k: usize) -> Vec<f64> {
    let nk = knots.len();
    let mut b = vec![0.0; nk - 1];
    let hi = knots[k];
    let tol = 1e-12 * (knots[nk - 1] - knots[0]).abs().max(1.0);
    if (x - hi).abs() <= tol {
        b[k - 1] = 1.0;
    } else {
        for j in 0..nk - 1 {
            if knots[j] <= x && x < knots[j + 1] {
                b[j] = 1.0;
                break;
            }
        }
    }
    for p in 1..=degree {
        for j in 0..nk - 1 - p {
            let d1 = knots[j + p] - knots[j];
            let d2 = knots[j + p + 1] - knots[j + 1];
            let w1 = if d1 > 0.0 { (x - knots[j]) / d1 } else { 0.0 };
            let w2 = if d2 > 0.0 { (knots[j + p + 1] - x) / d2 } else { 0.0 };
            b[j] = w1 * b[j] + w2 * b[j + 1];
        }
    }
    b.truncate(k);
    b
}

/// `(k − order) × k` finite-difference operator.
pub fn difference_matrix(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

pub fn build_spline_basis(x: &[f64], k: usize, penalty_order: usize) -> Result<SplineBasis> {
    build_spline_basis_with_degree(x, k, penalty_order, default_degree())
}

pub fn build_spline_basis_with_degree(
    x: &[f64],
    k: usize,
    penalty_order: usize,
    degree: usize,
) -> Result<SplineBasis> {
    if x.len() < 2 {
        return invalid("spline basis needs at least two covariate values");
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return invalid(format!("non-finite covariate value at index {i}"));
    }
    let (lo, hi) = range_of(x.iter().copied());
    basis_on_range(x, lo, hi, k, penalty_order, degree)
}

fn check_dims(k: usize, penalty_order: usize, degree: usize) -> Result<()> {
    if k < 3 {
        return Err(Error::Config(format!("basis dimension {k} is below 3")));
    }
    if k < penalty_order + 1 {
        return Err(Error::Config(format!(
            "basis dimension {k} too small for penalty order {penalty_order}"
        )));
    }
    if k < degree + 1 {
        return Err(Error::Config(format!("basis dimension {k} too small for degree {degree}")));
    }
    Ok(())
}

fn basis_on_range(
    x: &[f64],
    lo: f64,
    hi: f64,
    k: usize,
    penalty_order: usize,
    degree: usize,
) -> Result<SplineBasis> {
    check_dims(k, penalty_order, degree)?;
    if !(hi > lo) {
        return invalid("covariate has zero range; cannot place knots");
    }
    let knots = spline_knots(lo, hi, k, degree);
    let mut basis = DMatrix::zeros(x.len(), k);
    for (i, &xi) in x.iter().enumerate() {
        for (j, v) in bspline_row(xi, &knots, degree, k).into_iter().enumerate() {
            basis[(i, j)] = v;
        }
    }
    let d = difference_matrix(k, penalty_order);
    let penalty = d.transpose() * d;
    Ok(SplineBasis { basis, penalty, knots, degree })
}

fn range_of(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// `k × (k−1)` orthonormal basis of the complement of `c` (Householder).
fn constraint_nullspace(c: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = c.len();
    let norm = c.norm();
    if !(norm > 0.0) {
        return invalid("spline block has no active rows");
    }
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    Ok(h.columns(1, k - 1).into_owned())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Smooth,
    RandomIntercept,
}

/// A penalized block of `Z` columns with prior precision `λ·S`.
#[derive(Clone, Debug)]
pub struct PenaltyBlock {
    pub term: usize,
    pub cols: Range<usize>,
    pub penalty: DMatrix<f64>,
    pub rank: usize,
    /// Log of the product of the non-zero eigenvalues of `penalty`.
    pub log_det_plus: f64,
    pub null_dim: usize,
    pub kind: BlockKind,
}

#[derive(Clone, Debug)]
pub enum TermBasis {
    Intercept,
    Linear { covariate: String },
    Spline {
        covariate: String,
        knots: Vec<f64>,
        degree: usize,
        k: usize,
        transform: DMatrix<f64>,
        by: Option<String>,
        by_level: Option<(String, String)>,
        lo: f64,
        hi: f64,
    },
    RandomIntercept { factor: String, levels: Vec<String> },
}

/// Column map entry: which parameter a term belongs to and where its
/// coefficients live.
#[derive(Clone, Debug)]
pub struct TermInfo {
    pub label: String,
    pub param: usize,
    pub kind: TermKind,
    pub fixed_cols: Range<usize>,
    pub random_cols: Range<usize>,
    pub block: Option<usize>,
    pub basis: TermBasis,
}

impl TermInfo {
    pub fn covariate(&self) -> Option<&str> {
        match &self.basis {
            TermBasis::Intercept => None,
            TermBasis::Linear { covariate } | TermBasis::Spline { covariate, .. } => Some(covariate),
            TermBasis::RandomIntercept { factor, .. } => Some(factor),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.fixed_cols.len() + self.random_cols.len()
    }

    /// Indices into the stacked coefficient vector `γ = (α, β)`.
    pub fn gamma_indices(&self, n_fixed: usize) -> Vec<usize> {
        self.fixed_cols
            .clone()
            .chain(self.random_cols.clone().map(|c| c + n_fixed))
            .collect()
    }
}

/// Sparse per-row predictor entries `(γ index, weight)` for one parameter.
#[derive(Clone, Debug, Default)]
pub struct RowEntries {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl RowEntries {
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Covariate values at which terms are evaluated for prediction.
#[derive(Clone, Debug, Default)]
pub struct Scenario {
    pub grid_covariate: String,
    pub grid: Vec<f64>,
    pub numeric: BTreeMap<String, f64>,
    pub levels: BTreeMap<String, String>,
}

impl Scenario {
    pub fn new(grid_covariate: &str, grid: Vec<f64>) -> Self {
        Self { grid_covariate: grid_covariate.to_string(), grid, ..Default::default() }
    }

    pub fn with_value(mut self, covariate: &str, v: f64) -> Self {
        self.numeric.insert(covariate.to_string(), v);
        self
    }

    pub fn with_level(mut self, factor: &str, level: &str) -> Self {
        self.levels.insert(factor.to_string(), level.to_string());
        self
    }

    fn value(&self, covariate: &str, m: usize) -> Option<f64> {
        if covariate == self.grid_covariate {
            Some(self.grid[m])
        } else {
            self.numeric.get(covariate).copied()
        }
    }
}

/// Fixed/random design matrices, penalty blocks and the column map.
#[derive(Clone, Debug)]
pub struct DesignSet {
    pub params: Vec<String>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub blocks: Vec<PenaltyBlock>,
    pub terms: Vec<TermInfo>,
    pub param_fixed: Vec<Range<usize>>,
    pub param_random: Vec<Range<usize>>,
    rows: Vec<RowEntries>,
}

struct Builder<'a> {
    data: &'a SeriesData,
    xcols: Vec<Vec<f64>>,
    zcols: Vec<Vec<f64>>,
    blocks: Vec<PenaltyBlock>,
    terms: Vec<TermInfo>,
}

impl Builder<'_> {
    fn push_fixed(&mut self, param: usize, label: String, kind: TermKind, col: Vec<f64>, basis: TermBasis) {
        let c = self.xcols.len();
        self.xcols.push(col);
        self.terms.push(TermInfo {
            label,
            param,
            kind,
            fixed_cols: c..c + 1,
            random_cols: 0..0,
            block: None,
            basis,
        });
    }

    fn push_random(
        &mut self,
        param: usize,
        label: String,
        kind: TermKind,
        cols: Vec<Vec<f64>>,
        penalty: DMatrix<f64>,
        basis: TermBasis,
    ) {
        let start = self.zcols.len();
        let q = cols.len();
        self.zcols.extend(cols);
        let (rank, log_det_plus) = rank_and_log_det(&penalty);
        let block_kind = if kind == TermKind::RandomIntercept {
            BlockKind::RandomIntercept
        } else {
            BlockKind::Smooth
        };
        self.blocks.push(PenaltyBlock {
            term: self.terms.len(),
            cols: start..start + q,
            penalty,
            rank,
            log_det_plus,
            null_dim: q - rank,
            kind: block_kind,
        });
        self.terms.push(TermInfo {
            label,
            param,
            kind,
            fixed_cols: 0..0,
            random_cols: start..start + q,
            block: Some(self.blocks.len() - 1),
            basis,
        });
    }
}

fn rank_and_log_det(s: &DMatrix<f64>) -> (usize, f64) {
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = 1e-11 * max.max(f64::MIN_POSITIVE);
    let (mut rank, mut ld) = (0, 0.0);
    for &e in eig.eigenvalues.iter() {
        if e > tol {
            rank += 1;
            ld += e.ln();
        }
    }
    (rank, ld)
}

fn indicator_column(data: &SeriesData, name: &str) -> Result<Vec<f64>> {
    let v = data.numeric(name)?;
    if let Some(i) = v.iter().position(|&x| x != 0.0 && x != 1.0) {
        return invalid(format!("by-column `{name}` must be 0/1, found {} at row {i}", v[i]));
    }
    Ok(v.to_vec())
}

fn add_spline(b: &mut Builder<'_>, param: usize, pname: &str, spec: &TermSpec) -> Result<()> {
    let cov = spec.covariate_name()?;
    let x = b.data.numeric(cov)?;
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return invalid(format!("non-finite value of `{cov}` at row {i}"));
    }
    check_dims(spec.basis_dim, spec.penalty_order, spec.degree)?;
    let n = x.len();
    let by = match &spec.by {
        Some(name) => Some(indicator_column(b.data, name)?),
        None => None,
    };
    let base_mult: Vec<f64> = by.clone().unwrap_or_else(|| vec![1.0; n]);

    // (multiplier, label suffix, level)
    let mut variants: Vec<(Vec<f64>, String, Option<(String, String)>)> = Vec::new();
    let by_suffix = spec.by.as_ref().map(|s| format!(":by={s}")).unwrap_or_default();
    match &spec.by_factor {
        None => variants.push((base_mult, by_suffix, None)),
        Some(fname) => {
            let (levels, codes) = b.data.factor(fname)?;
            for (li, level) in levels.iter().enumerate() {
                let m: Vec<f64> = (0..n)
                    .map(|i| if codes[i] == li { base_mult[i] } else { 0.0 })
                    .collect();
                if m.iter().any(|&v| v != 0.0) {
                    variants.push((
                        m,
                        format!("{by_suffix}:{fname}={level}"),
                        Some((fname.clone(), level.clone())),
                    ));
                }
            }
            if variants.is_empty() {
                return invalid(format!("by-factor smooth on `{fname}` has no active rows"));
            }
        }
    }

    for (mult, suffix, by_level) in variants {
        let active: Vec<f64> = (0..n).filter(|&i| mult[i] != 0.0).map(|i| x[i]).collect();
        if active.len() < 2 {
            return invalid(format!("smooth of `{cov}`{suffix} has fewer than two active rows"));
        }
        let (lo, hi) = range_of(active.iter().copied());
        let raw = basis_on_range(x, lo, hi, spec.basis_dim, spec.penalty_order, spec.degree)?;
        let k = spec.basis_dim;
        let mut bm = raw.basis;
        for i in 0..n {
            for j in 0..k {
                bm[(i, j)] *= mult[i];
            }
        }
        let sums = DVector::from_fn(k, |j, _| bm.column(j).sum());
        let t = constraint_nullspace(&sums)?;
        let zb = &bm * &t;
        let mut s = t.transpose() * &raw.penalty * &t;
        s = 0.5 * (&s + s.transpose());
        if spec.shrinkage {
            let q = s.nrows();
            let eps = 1e-8 * s.trace() / q as f64;
            for j in 0..q {
                s[(j, j)] += eps;
            }
        }
        let cols: Vec<Vec<f64>> = (0..zb.ncols()).map(|j| zb.column(j).iter().copied().collect()).collect();
        b.push_random(
            param,
            format!("{pname}:s({cov}){suffix}"),
            TermKind::Spline,
            cols,
            s,
            TermBasis::Spline {
                covariate: cov.to_string(),
                knots: raw.knots,
                degree: raw.degree,
                k,
                transform: t,
                by: spec.by.clone(),
                by_level,
                lo,
                hi,
            },
        );
    }
    Ok(())
}

/// Builds the design for `formulas` over `data`. Parameters without a
/// formula get an intercept-only predictor.
pub fn build_design(param_names: &[&str], formulas: &[Formula], data: &SeriesData) -> Result<DesignSet> {
    for f in formulas {
        if !param_names.contains(&f.parameter.as_str()) {
            return Err(Error::Config(format!(
                "formula for unknown parameter `{}` (expected one of {:?})",
                f.parameter, param_names
            )));
        }
    }
    let n = data.len();
    let mut b = Builder { data, xcols: Vec::new(), zcols: Vec::new(), blocks: Vec::new(), terms: Vec::new() };
    let mut param_fixed = Vec::new();
    let mut param_random = Vec::new();

    for (pi, &pname) in param_names.iter().enumerate() {
        let default = Formula::intercept_only(pname);
        let formula = formulas.iter().find(|f| f.parameter == pname).unwrap_or(&default);
        let n_int = formula.terms.iter().filter(|t| t.kind == TermKind::Intercept).count();
        if n_int > 1 {
            return Err(Error::Config(format!("formula for `{pname}` has {n_int} intercepts")));
        }
        let (x0, z0) = (b.xcols.len(), b.zcols.len());
        for spec in &formula.terms {
            match spec.kind {
                TermKind::Intercept => {
                    b.push_fixed(pi, format!("{pname}:(Intercept)"), TermKind::Intercept, vec![1.0; n], TermBasis::Intercept)
                }
                TermKind::Linear => {
                    let cov = spec.covariate_name()?;
                    let v = data.numeric(cov)?;
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return invalid(format!("non-finite value of `{cov}` at row {i}"));
                    }
                    b.push_fixed(
                        pi,
                        format!("{pname}:{cov}"),
                        TermKind::Linear,
                        v.to_vec(),
                        TermBasis::Linear { covariate: cov.to_string() },
                    )
                }
                TermKind::Spline => add_spline(&mut b, pi, pname, spec)?,
                TermKind::RandomIntercept => {
                    let cov = spec.covariate_name()?;
                    let (levels, codes) = data.factor(cov)?;
                    let cols: Vec<Vec<f64>> = (0..levels.len())
                        .map(|l| codes.iter().map(|&c| if c == l { 1.0 } else { 0.0 }).collect())
                        .collect();
                    let q = cols.len();
                    b.push_random(
                        pi,
                        format!("{pname}:re({cov})"),
                        TermKind::RandomIntercept,
                        cols,
                        DMatrix::identity(q, q),
                        TermBasis::RandomIntercept { factor: cov.to_string(), levels: levels.to_vec() },
                    );
                }
            }
        }
        param_fixed.push(x0..b.xcols.len());
        param_random.push(z0..b.zcols.len());
    }

    let p = b.xcols.len();
    let x = DMatrix::from_fn(n, p, |i, j| b.xcols[j][i]);
    let z = DMatrix::from_fn(n, b.zcols.len(), |i, j| b.zcols[j][i]);
    let rows = (0..param_names.len())
        .map(|pi| {
            let mut re = RowEntries { offsets: vec![0], entries: Vec::new() };
            for i in 0..n {
                for c in param_fixed[pi].clone() {
                    let v = b.xcols[c][i];
                    if v != 0.0 {
                        re.entries.push((c, v));
                    }
                }
                for c in param_random[pi].clone() {
                    let v = b.zcols[c][i];
                    if v != 0.0 {
                        re.entries.push((p + c, v));
                    }
                }
                re.offsets.push(re.entries.len());
            }
            re
        })
        .collect();
    Ok(DesignSet {
        params: param_names.iter().map(|s| s.to_string()).collect(),
        x,
        z,
        blocks: b.blocks,
        terms: b.terms,
        param_fixed,
        param_random,
        rows,
    })
}

impl DesignSet {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_random(&self) -> usize {
        self.z.ncols()
    }

    pub fn n_coef(&self) -> usize {
        self.n_fixed() + self.n_random()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn term_id(&self, label: &str) -> Result<usize> {
        self.terms
            .iter()
            .position(|t| t.label == label)
            .ok_or_else(|| Error::UnknownTerm(label.to_string()))
    }

    pub fn term(&self, id: usize) -> Result<&TermInfo> {
        self.terms.get(id).ok_or_else(|| Error::UnknownTerm(format!("#{id}")))
    }

    /// Column of `α` holding the intercept of parameter `param`, if any.
    pub fn intercept_col(&self, param: usize) -> Option<usize> {
        self.terms
            .iter()
            .find(|t| t.param == param && t.kind == TermKind::Intercept)
            .map(|t| t.fixed_cols.start)
    }

    /// Sparse `(γ index, weight)` entries of parameter `param` at `row`.
    pub fn row_entries(&self, param: usize, row: usize) -> &[(usize, f64)] {
        self.rows[param].row(row)
    }

    /// Linear predictor of every parameter at `row`.
    pub fn eta(&self, gamma: &[f64], row: usize) -> Vec<f64> {
        (0..self.n_params())
            .map(|k| self.row_entries(k, row).iter().map(|&(c, w)| w * gamma[c]).sum())
            .collect()
    }

    /// Term basis on a scenario grid: `M × n_cols` matrix whose columns
    /// correspond to [`TermInfo::gamma_indices`]. With `bare` set, any `by`
    /// multiplier is dropped, linear terms on other covariates default to a
    /// unit contrast, and random intercepts read level codes off the grid.
    pub fn term_matrix(&self, id: usize, sc: &Scenario, bare: bool) -> Result<DMatrix<f64>> {
        let term = self.term(id)?;
        let m = sc.grid.len();
        let q = term.n_cols();
        let mut out = DMatrix::zeros(m, q);
        match &term.basis {
            TermBasis::Intercept => out.fill(1.0),
            TermBasis::Linear { covariate } => {
                for r in 0..m {
                    out[(r, 0)] = match sc.value(covariate, r) {
                        Some(v) => v,
                        None if bare => 1.0,
                        None => {
                            return Err(Error::Config(format!("no value for covariate `{covariate}`")))
                        }
                    };
                }
            }
            TermBasis::Spline { covariate, knots, degree, k, transform, by, by_level, lo, hi } => {
                for r in 0..m {
                    let xv = sc
                        .value(covariate, r)
                        .ok_or_else(|| Error::Config(format!("no value for covariate `{covariate}`")))?;
                    if !xv.is_finite() {
                        return invalid(format!("non-finite grid value {xv}"));
                    }
                    if xv < *lo - 1e-12 || xv > *hi + 1e-12 {
                        log::warn!("{}: evaluating at {xv} outside data range [{lo}, {hi}]", term.label);
                    }
                    let mult = if bare {
                        1.0
                    } else {
                        let a = match by {
                            Some(name) => sc
                                .value(name, r)
                                .ok_or_else(|| Error::Config(format!("no value for by-column `{name}`")))?,
                            None => 1.0,
                        };
                        let b = match by_level {
                            Some((f, level)) => {
                                if sc.levels.get(f) == Some(level) {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            None => 1.0,
                        };
                        a * b
                    };
                    if mult == 0.0 {
                        continue;
                    }
                    let row = DVector::from_vec(bspline_row(xv, knots, *degree, *k));
                    let c = transform.transpose() * row;
                    for j in 0..q {
                        out[(r, j)] = mult * c[j];
                    }
                }
            }
            TermBasis::RandomIntercept { factor, levels } => {
                for r in 0..m {
                    let code = if bare {
                        let v = sc.grid[r].round();
                        if v < 0.0 || v as usize >= levels.len() {
                            return invalid(format!("level code {} out of range", sc.grid[r]));
                        }
                        Some(v as usize)
                    } else {
                        sc.levels.get(factor).and_then(|l| levels.iter().position(|x| x == l))
                    };
                    if let Some(c) = code {
                        out[(r, c)] = 1.0;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense `M × n_coef` prediction matrix for the full linear predictor of
    /// `param` under a scenario.
    pub fn predict_matrix(&self, param: usize, sc: &Scenario) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(sc.grid.len(), self.n_coef());
        for (id, t) in self.terms.iter().enumerate() {
            if t.param != param {
                continue;
            }
            let tm = self.term_matrix(id, sc, false)?;
            for (j, g) in t.gamma_indices(self.n_fixed()).into_iter().enumerate() {
                out.column_mut(g).copy_from(&tm.column(j));
            }
        }
        Ok(out)
    }

    /// Dense `M × n_coef` matrix for the sum of the listed terms, each
    /// evaluated bare.
    pub fn terms_matrix(&self, ids: &[usize], sc: &Scenario) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(sc.grid.len(), self.n_coef());
        for &id in ids {
            let tm = self.term_matrix(id, sc, true)?;
            for (j, g) in self.term(id)?.gamma_indices(self.n_fixed()).into_iter().enumerate() {
                out.column_mut(g).copy_from(&tm.column(j));
            }
        }
        Ok(out)
    }
}

/// `C_x β_term`: one term evaluated on a grid of its covariate.
pub fn eval_smooth(design: &DesignSet, term_id: usize, gamma: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let term = design.term(term_id)?;
    let cov = term.covariate().unwrap_or("");
    let sc = Scenario::new(cov, grid.to_vec());
    let c = design.term_matrix(term_id, &sc, true)?;
    let idx = term.gamma_indices(design.n_fixed());
    let coef = DVector::from_iterator(idx.len(), idx.iter().map(|&g| gamma[g]));
    Ok((c * coef).iter().copied().collect())
}

/// Numeric covariate medians, used as default "other term" values.
pub fn covariate_medians(data: &SeriesData) -> BTreeMap<String, f64> {
    data.covariates
        .iter()
        .filter_map(|(k, c)| match c {
            Column::Numeric(v) if !v.is_empty() => {
                let mut s = v.clone();
                s.sort_by(|a, b| a.total_cmp(b));
                let n = s.len();
                let med = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
                Some((k.clone(), med))
            }
            _ => None,
        })
        .collect()
}
