//! Model fitting: penalized likelihood, inner Newton solve for the random
//! coefficients, Laplace-approximate marginal likelihood and an outer
//! quasi-Newton search over fixed effects and log smoothing parameters.

use crate::basis::{build_design, DesignSet, Formula};
use crate::data::SeriesData;
use crate::error::{Error, Result};
use crate::sde::{neg_log_lik_derivs, Family, LikEval, Link, Order};
use crate::ssm::kalman_nll_derivs;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// How the process is observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Direct likelihood of exactly observed values.
    Exact,
    /// Kalman filter with per-row measurement error (2-D OU only).
    Kalman,
}

/// SDE family, formulas, data and the design built from them.
#[derive(Clone, Debug)]
pub struct Model {
    pub family: Family,
    pub observation: Observation,
    pub formulas: Vec<Formula>,
    pub data: SeriesData,
    pub design: DesignSet,
}

impl Model {
    pub fn new(family: Family, formulas: Vec<Formula>, data: SeriesData, observation: Observation) -> Result<Self> {
        data.validate()?;
        if observation == Observation::Kalman && family != Family::Ou2 {
            return Err(Error::Config("the state-space likelihood is implemented for the 2-D OU family".into()));
        }
        let design = build_design(family.param_names(), &formulas, &data)?;
        Ok(Self { family, observation, formulas, data, design })
    }

    pub fn n_fixed(&self) -> usize {
        self.design.n_fixed()
    }

    pub fn n_random(&self) -> usize {
        self.design.n_random()
    }

    pub fn n_blocks(&self) -> usize {
        self.design.blocks.len()
    }

    /// Data negative log-likelihood in `γ = (α, β)`.
    pub fn data_nll(&self, gamma: &[f64], order: Order) -> Result<LikEval> {
        match self.observation {
            Observation::Exact => neg_log_lik_derivs(self.family, &self.design, &self.data, gamma, order),
            Observation::Kalman => kalman_nll_derivs(&self.design, &self.data, gamma, order),
        }
    }

    pub fn stack(&self, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
        alpha.iter().chain(beta).copied().collect()
    }

    /// Default starting values for `α`: zero except parameter intercepts,
    /// which start at σ = 0.3, τ = 10, κ = 1000, and OU centres at the
    /// mean observed coordinate.
    pub fn default_alpha(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n_fixed()];
        for (k, name) in self.family.param_names().iter().enumerate() {
            let Some(col) = self.design.intercept_col(k) else { continue };
            a[col] = match (*name, self.family) {
                ("sigma", _) => 0.3f64.ln(),
                ("tau", _) => 10f64.ln(),
                ("kappa", _) => 1000f64.ln(),
                ("mu", Family::Ou1) => mean_finite(&self.data.coords[0]),
                ("mu_x", _) => mean_finite(&self.data.coords[0]),
                ("mu_y", _) => mean_finite(&self.data.coords[1]),
                _ => 0.0,
            };
        }
        a
    }

    /// Index in `α` of a fixed-effect term.
    pub fn fixed_index(&self, label: &str) -> Result<usize> {
        let t = self.design.term(self.design.term_id(label)?)?;
        if t.fixed_cols.len() != 1 {
            return Err(Error::Config(format!("term `{label}` is not a single fixed effect")));
        }
        Ok(t.fixed_cols.start)
    }
}

fn mean_finite(v: &[f64]) -> f64 {
    let (s, n) = v.iter().filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn check_lambda(model: &Model, lambda: &[f64]) -> Result<()> {
    if lambda.len() != model.n_blocks() {
        return Err(Error::InvalidInput(format!(
            "expected {} smoothing parameters, got {}",
            model.n_blocks(),
            lambda.len()
        )));
    }
    if let Some(l) = lambda.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidInput(format!("smoothing parameters must be positive, got {l}")));
    }
    Ok(())
}

/// `−log` of the normalizing constants of the Gaussian random-effect priors.
fn prior_constant(model: &Model, lambda: &[f64]) -> f64 {
    model
        .design
        .blocks
        .iter()
        .zip(lambda)
        .map(|(b, &l)| {
            let r = b.rank as f64;
            -0.5 * (r * l.ln() + b.log_det_plus) + 0.5 * r * (2.0 * PI).ln()
        })
        .sum()
}

/// Penalized objective `data nll + ½ΣλⱼβⱼᵀSⱼβⱼ + prior constants`.
pub fn penalized_eval(model: &Model, gamma: &[f64], lambda: &[f64], order: Order) -> Result<LikEval> {
    check_lambda(model, lambda)?;
    let mut ev = model.data_nll(gamma, order)?;
    let p = model.n_fixed();
    for (b, &l) in model.design.blocks.iter().zip(lambda) {
        let off = p + b.cols.start;
        let q = b.cols.len();
        let beta = DVector::from_column_slice(&gamma[off..off + q]);
        let sb = &b.penalty * &beta;
        ev.value += 0.5 * l * beta.dot(&sb);
        if order >= Order::Gradient {
            for j in 0..q {
                ev.grad[off + j] += l * sb[j];
            }
        }
        if order >= Order::Hessian {
            for i in 0..q {
                for j in 0..q {
                    ev.hess[(off + i, off + j)] += l * b.penalty[(i, j)];
                }
            }
        }
    }
    ev.value += prior_constant(model, lambda);
    Ok(ev)
}

pub fn penalized_nll(model: &Model, alpha: &[f64], beta: &[f64], lambda: &[f64]) -> Result<f64> {
    Ok(penalized_eval(model, &model.stack(alpha, beta), lambda, Order::Value)?.value)
}

/// Tolerances and iteration limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative central-difference step for the outer gradient.
    pub fd_step: f64,
    /// Largest ∞-norm of an outer step.
    pub max_step: f64,
    /// Starting `α`; defaults to [`Model::default_alpha`].
    pub alpha_init: Option<Vec<f64>>,
    /// Natural-scale starting values for parameter intercepts.
    pub intercept_init: BTreeMap<String, f64>,
    pub log_lambda_init: Option<Vec<f64>>,
    /// Indices of `α` held at their starting values.
    pub fixed: Vec<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-4,
            inner_tol: 1e-8,
            max_outer: 200,
            max_inner: 100,
            fd_step: 1e-5,
            max_step: 5.0,
            alpha_init: None,
            intercept_init: BTreeMap::new(),
            log_lambda_init: None,
            fixed: Vec::new(),
        }
    }
}

/// Conditional mode of `β` with the Hessian there.
#[derive(Clone, Debug)]
pub struct InnerMode {
    pub beta: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn sub_block(ev: &LikEval, p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let r = ev.grad.len() - p;
    (ev.grad.rows(p, r).into_owned(), ev.hess.view((p, p), (r, r)).into_owned())
}

/// Newton iterations on `β` with Levenberg damping and backtracking.
pub fn inner_mode(
    model: &Model,
    alpha: &[f64],
    lambda: &[f64],
    beta_init: &[f64],
    cfg: &FitConfig,
) -> Result<InnerMode> {
    let p = model.n_fixed();
    let r = model.n_random();
    if beta_init.len() != r || alpha.len() != p {
        return Err(Error::InvalidInput("coefficient vector lengths do not match the design".into()));
    }
    if beta_init.iter().chain(alpha).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite starting values".into()));
    }
    let mut gamma = model.stack(alpha, beta_init);
    let value_at = |g: &[f64]| penalized_eval(model, g, lambda, Order::Value).map(|e| e.value);
    let mut iterations = 0;
    // one extra Newton step past the tolerance keeps the mode, and hence
    // the Laplace value, nearly independent of the warm start
    let mut polish = r == 0;
    loop {
        let ev = penalized_eval(model, &gamma, lambda, Order::Hessian)?;
        let (g, h) = sub_block(&ev, p);
        let f = ev.value;
        let gn = if r == 0 { 0.0 } else { g.amax() };
        let tol = cfg.inner_tol * (1.0 + f.abs());
        if gn < tol && !polish {
            polish = true;
        } else if gn < tol {
            if r > 0 && h.clone().cholesky().is_none() {
                return Err(Error::IndefiniteHessian);
            }
            return Ok(InnerMode { beta: gamma[p..].to_vec(), hessian: h, value: f, iterations, grad_norm: gn });
        }
        if iterations >= cfg.max_inner {
            return Err(Error::InnerNonConvergence { iterations, grad_norm: gn });
        }
        if !polish {
            iterations += 1;
        }
        let mut damping = 0.0;
        let dir = loop {
            let mut hd = h.clone();
            for i in 0..r {
                hd[(i, i)] += damping;
            }
            if let Some(ch) = hd.cholesky() {
                break ch.solve(&(-&g));
            }
            damping = if damping == 0.0 { 1e-6 } else { 2.0 * damping };
            if damping > 1e12 {
                return Err(Error::IndefiniteHessian);
            }
        };
        let slope = g.dot(&dir);
        // a full Newton step may be taken when its predicted decrease is
        // below the resolution of f
        let fuzz = 1e-12 * (1.0 + f.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> =
                gamma.iter().enumerate().map(|(i, v)| if i < p { *v } else { v + t * dir[i - p] }).collect();
            if trial == gamma {
                break;
            }
            if let Ok(ft) = value_at(&trial) {
                let slack = if t == 1.0 { fuzz } else { 0.0 };
                if ft.is_finite() && ft <= f + 1e-4 * t * slope + slack {
                    gamma = trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // no further decrease is representable: accept if nearly stationary
            if gn < 1e2 * tol {
                if h.clone().cholesky().is_none() {
                    return Err(Error::IndefiniteHessian);
                }
                return Ok(InnerMode { beta: gamma[p..].to_vec(), hessian: h, value: f, iterations, grad_norm: gn });
            }
            return Err(Error::InnerNonConvergence { iterations, grad_norm: gn });
        }
    }
}

fn log_det_pd(h: &DMatrix<f64>) -> Result<f64> {
    if h.nrows() == 0 {
        return Ok(0.0);
    }
    let ch = h.clone().cholesky().ok_or(Error::IndefiniteHessian)?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Laplace marginal `f(β̂) + ½log det H − (r/2)log 2π` with the mode.
pub fn laplace_with_mode(
    model: &Model,
    alpha: &[f64],
    lambda: &[f64],
    beta_init: &[f64],
    cfg: &FitConfig,
) -> Result<(f64, InnerMode)> {
    let m = inner_mode(model, alpha, lambda, beta_init, cfg)?;
    let r = model.n_random() as f64;
    let v = m.value + 0.5 * log_det_pd(&m.hessian)? - 0.5 * r * (2.0 * PI).ln();
    Ok((v, m))
}

/// Laplace-approximate negative log marginal likelihood, starting the
/// inner solve at `β = 0`.
pub fn laplace_marginal(model: &Model, alpha: &[f64], lambda: &[f64]) -> Result<f64> {
    let zero = vec![0.0; model.n_random()];
    Ok(laplace_with_mode(model, alpha, lambda, &zero, &FitConfig::default())?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub status: FitStatus,
    /// ∞-norm of the outer gradient at the returned point.
    pub grad_norm: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    /// Marginal nll at each accepted outer iterate.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Estimates with the joint covariance of `γ = (α, β)` at `λ̂`.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub marginal_nll: f64,
    pub penalized_nll: f64,
    pub data_nll: f64,
    pub fixed: Vec<usize>,
    pub convergence: Convergence,
}

impl FitResult {
    pub fn gamma(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub fn converged(&self) -> bool {
        self.convergence.status == FitStatus::Converged
    }

    pub fn std_error(&self, gamma_index: usize) -> f64 {
        self.covariance[(gamma_index, gamma_index)].max(0.0).sqrt()
    }

    /// Normal-theory interval for a coefficient on the link scale.
    pub fn wald_interval(&self, gamma_index: usize, z: f64) -> (f64, f64) {
        let g = self.gamma()[gamma_index];
        let se = self.std_error(gamma_index);
        (g - z * se, g + z * se)
    }

    /// Random-intercept variances `ν² = 1/λ` paired with block indices.
    pub fn random_effect_variances(&self, model: &Model) -> Vec<(usize, f64)> {
        model
            .design
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == crate::basis::BlockKind::RandomIntercept)
            .map(|(j, _)| (j, 1.0 / self.lambda[j]))
            .collect()
    }
}

/// Inverse Hessian of the penalized nll in the free coefficients at fixed
/// `λ`; rows and columns of held coefficients are zero. Falls back to an
/// eigenvalue pseudo-inverse (with a warning) when not positive definite.
pub fn joint_covariance(
    model: &Model,
    gamma: &[f64],
    lambda: &[f64],
    fixed: &[usize],
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let ev = penalized_eval(model, gamma, lambda, Order::Hessian)?;
    let n = gamma.len();
    let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
    let m = free.len();
    let mut h = DMatrix::from_fn(m, m, |i, j| ev.hess[(free[i], free[j])]);
    h = 0.5 * (&h + h.transpose());
    let mut warnings = Vec::new();
    let inv = match h.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let msg = "joint Hessian not positive definite; using pseudo-inverse".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
            let e = SymmetricEigen::new(h);
            let tol = 1e-12 * e.eigenvalues.amax().max(f64::MIN_POSITIVE);
            let d = DVector::from_iterator(m, e.eigenvalues.iter().map(|&v| if v > tol { 1.0 / v } else { 0.0 }));
            &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
        }
    };
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            cov[(free[i], free[j])] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
    }
    Ok((cov, warnings))
}

struct Outer<'a> {
    model: &'a Model,
    cfg: &'a FitConfig,
    alpha0: Vec<f64>,
    free: Vec<usize>,
    warm: Vec<f64>,
    evaluations: usize,
    inner_iterations: usize,
    last_error: Option<String>,
}

impl Outer<'_> {
    fn unpack(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut alpha = self.alpha0.clone();
        for (k, &i) in self.free.iter().enumerate() {
            alpha[i] = theta[k];
        }
        let lambda = theta[self.free.len()..].iter().map(|v| v.exp()).collect();
        (alpha, lambda)
    }

    fn eval(&mut self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (alpha, lambda) = self.unpack(theta);
        match laplace_with_mode(self.model, &alpha, &lambda, &self.warm, self.cfg) {
            Ok((v, m)) if v.is_finite() => {
                self.inner_iterations += m.iterations;
                Some((v, m.beta))
            }
            Ok(_) => {
                self.last_error = Some("non-finite marginal likelihood".into());
                None
            }
            Err(e) => {
                log::debug!("trial point rejected: {e}");
                self.last_error = Some(e.to_string());
                None
            }
        }
    }

    fn gradient(&mut self, theta: &[f64], f0: f64) -> Result<DVector<f64>> {
        let n = theta.len();
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let h = self.cfg.fd_step * theta[i].abs().max(1.0);
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[i] += h;
            tm[i] -= h;
            let fp = self.eval(&tp).map(|x| x.0);
            let fm = self.eval(&tm).map(|x| x.0);
            g[i] = match (fp, fm) {
                (Some(a), Some(b)) => (a - b) / (2.0 * h),
                (Some(a), None) => (a - f0) / h,
                (None, Some(b)) => (f0 - b) / h,
                (None, None) => {
                    let why = self.last_error.clone().unwrap_or_default();
                    return Err(Error::Numerical(format!("marginal likelihood undefined around coordinate {i}: {why}")));
                }
            };
        }
        Ok(g)
    }
}

/// Fits the model by maximizing the Laplace marginal likelihood over
/// `(α, log λ)` jointly.
pub fn fit(model: &Model, cfg: &FitConfig) -> Result<FitResult> {
    let p = model.n_fixed();
    let mut alpha0 = cfg.alpha_init.clone().unwrap_or_else(|| model.default_alpha());
    if alpha0.len() != p {
        return Err(Error::Config(format!("alpha_init has {} values, expected {p}", alpha0.len())));
    }
    let links = model.family.links();
    for (name, &v) in &cfg.intercept_init {
        let k = model.design.param_index(name)?;
        let col = model
            .design
            .intercept_col(k)
            .ok_or_else(|| Error::Config(format!("parameter `{name}` has no intercept")))?;
        let eta = links[k].apply(v);
        if !eta.is_finite() {
            return Err(Error::Config(format!("initial value {v} for `{name}` is outside the link domain")));
        }
        alpha0[col] = eta;
    }
    if let Some(&i) = cfg.fixed.iter().find(|&&i| i >= p) {
        return Err(Error::Config(format!("fixed index {i} out of range")));
    }
    let free: Vec<usize> = (0..p).filter(|i| !cfg.fixed.contains(i)).collect();
    let nb = model.n_blocks();
    let ll0 = cfg.log_lambda_init.clone().unwrap_or_else(|| vec![0.0; nb]);
    if ll0.len() != nb {
        return Err(Error::Config(format!("log_lambda_init has {} values, expected {nb}", ll0.len())));
    }
    let mut theta: Vec<f64> = free.iter().map(|&i| alpha0[i]).chain(ll0).collect();
    let mut outer = Outer {
        model,
        cfg,
        alpha0,
        free,
        warm: vec![0.0; model.n_random()],
        evaluations: 0,
        inner_iterations: 0,
        last_error: None,
    };

    let (mut f, beta) = match outer.eval(&theta) {
        Some(x) => x,
        None => {
            let (alpha, lambda) = outer.unpack(&theta);
            laplace_with_mode(model, &alpha, &lambda, &vec![0.0; model.n_random()], cfg)?;
            return Err(Error::Numerical("marginal likelihood not finite at the starting values".into()));
        }
    };
    outer.warm = beta;
    let n = theta.len();
    let mut trace = vec![f];
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;
    let mut g = if n > 0 { outer.gradient(&theta, f)? } else { DVector::zeros(0) };
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    while iterations < cfg.max_outer {
        if n == 0 || g.amax() < cfg.outer_tol {
            status = FitStatus::Converged;
            break;
        }
        let mut d = -(&hinv * &g);
        if g.dot(&d) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            d = -g.clone();
        }
        let dmax = d.amax();
        if dmax > cfg.max_step {
            d *= cfg.max_step / dmax;
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-12 {
            let trial: Vec<f64> = theta.iter().zip(d.iter()).map(|(x, di)| x + t * di).collect();
            let target = f + 1e-4 * t * slope;
            if !(target < f) {
                // predicted decrease below the resolution of f
                break;
            }
            if let Some((ft, bt)) = outer.eval(&trial) {
                if ft <= target {
                    next = Some((trial, ft, bt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, ft, bt)) = next else {
            if !fresh {
                hinv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            // no representable decrease left: accept if nearly stationary
            status = if g.amax() < 1e2 * cfg.outer_tol { FitStatus::Converged } else { FitStatus::LineSearchFailed };
            break;
        };
        iterations += 1;
        outer.warm = bt;
        let gn = outer.gradient(&trial, ft)?;
        let s = DVector::from_iterator(n, trial.iter().zip(&theta).map(|(a, b)| a - b));
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - (&s * y.transpose()) * rho;
            hinv = &a * &hinv * a.transpose() + (&s * s.transpose()) * rho;
            fresh = false;
        }
        theta = trial;
        f = ft;
        g = gn;
        trace.push(f);
    }
    if status == FitStatus::MaxIterations && n > 0 && g.amax() < cfg.outer_tol {
        status = FitStatus::Converged;
    }

    let (alpha, lambda) = outer.unpack(&theta);
    let (marginal, mode) = laplace_with_mode(model, &alpha, &lambda, &outer.warm, cfg)?;
    let gamma = model.stack(&alpha, &mode.beta);
    let (covariance, mut warnings) = joint_covariance(model, &gamma, &lambda, &cfg.fixed)?;
    if status != FitStatus::Converged {
        let msg = format!("outer optimizer stopped ({status:?}) with gradient norm {:.3e}", g.amax());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let data_nll = model.data_nll(&gamma, Order::Value)?.value;
    Ok(FitResult {
        alpha,
        beta: mode.beta.clone(),
        lambda,
        covariance,
        marginal_nll: marginal,
        penalized_nll: mode.value,
        data_nll,
        fixed: cfg.fixed.clone(),
        convergence: Convergence {
            status,
            grad_norm: if n == 0 { 0.0 } else { g.amax() },
            outer_iterations: iterations,
            inner_iterations: outer.inner_iterations,
            evaluations: outer.evaluations,
            trace,
            warnings,
        },
    })
}

/// Natural-scale link helper for reporting (e.g. `b`, `σ` from `τ`, `κ`).
pub fn natural_intercepts(model: &Model, alpha: &[f64]) -> BTreeMap<String, f64> {
    let links = model.family.links();
    model
        .family
        .param_names()
        .iter()
        .enumerate()
        .filter_map(|(k, name)| {
            model.design.intercept_col(k).map(|c| (name.to_string(), links[k].inverse(alpha[c])))
        })
        .collect()
}

pub fn link_of(model: &Model, param: usize) -> Link {
    model.family.links()[param]
}
