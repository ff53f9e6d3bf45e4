//! SDE families, exact Gaussian transition laws, the direct likelihood of
//! exactly observed series, and exact simulation.

use crate::basis::DesignSet;
use crate::data::SeriesData;
use crate::error::{invalid, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }

    pub fn apply(self, theta: f64) -> f64 {
        match self {
            Link::Identity => theta,
            Link::Log => theta.ln(),
        }
    }
}

/// Brownian motion with drift, 1-D Ornstein–Uhlenbeck, or isotropic 2-D
/// Ornstein–Uhlenbeck with one centre of attraction per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Bm,
    Ou1,
    Ou2,
}

impl Family {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Bm => &["mu", "sigma"],
            Family::Ou1 => &["mu", "tau", "kappa"],
            Family::Ou2 => &["mu_x", "mu_y", "tau", "kappa"],
        }
    }

    pub fn links(self) -> Vec<Link> {
        match self {
            Family::Bm => vec![Link::Identity, Link::Log],
            Family::Ou1 => vec![Link::Identity, Link::Log, Link::Log],
            Family::Ou2 => vec![Link::Identity, Link::Identity, Link::Log, Link::Log],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    /// Observation dimension.
    pub fn dim(self) -> usize {
        match self {
            Family::Bm | Family::Ou1 => 1,
            Family::Ou2 => 2,
        }
    }

    fn is_ou(self) -> bool {
        !matches!(self, Family::Bm)
    }

    /// Parameters on the natural scale from linear predictors.
    pub fn natural(self, eta: &[f64]) -> Vec<f64> {
        self.links().iter().zip(eta).map(|(l, &e)| l.inverse(e)).collect()
    }

    /// Indices of the (drift, scale₁, scale₂) predictors used by coordinate `c`.
    fn local_indices(self, c: usize) -> [usize; 3] {
        match self {
            Family::Bm => [0, 1, 1],
            Family::Ou1 => [0, 1, 2],
            Family::Ou2 => [c, 2, 3],
        }
    }

    /// Transition law of coordinate `c` given natural-scale parameters.
    pub fn transition(self, theta: &[f64], c: usize, z0: f64, dt: f64) -> Result<Normal> {
        let [a, p1, p2] = self.local_indices(c);
        match self {
            Family::Bm => bm_transition(z0, theta[a], theta[p1], dt),
            _ => ou_transition(z0, theta[a], theta[p1], theta[p2], dt),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normal {
    pub mean: f64,
    pub var: f64,
}

impl Normal {
    pub fn log_density(&self, z: f64) -> f64 {
        let r = z - self.mean;
        -0.5 * ((2.0 * PI * self.var).ln() + r * r / self.var)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let xi: f64 = rng.sample(StandardNormal);
        self.mean + self.var.max(0.0).sqrt() * xi
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        invalid(format!("transition interval must be positive, got {dt}"))
    }
}

/// `N(z0 + aΔ, σ²Δ)`. A zero `sigma` is allowed for deterministic paths.
pub fn bm_transition(z0: f64, a: f64, sigma: f64, dt: f64) -> Result<Normal> {
    check_dt(dt)?;
    if !(sigma >= 0.0) {
        return invalid(format!("sigma must be non-negative, got {sigma}"));
    }
    Ok(Normal { mean: z0 + a * dt, var: sigma * sigma * dt })
}

/// `N((1−e^{−Δ/τ})a + e^{−Δ/τ}z0, κ(1−e^{−2Δ/τ}))`.
pub fn ou_transition(z0: f64, a: f64, tau: f64, kappa: f64, dt: f64) -> Result<Normal> {
    check_dt(dt)?;
    if !(tau > 0.0) || !(kappa >= 0.0) {
        return invalid(format!("OU needs tau > 0 and kappa >= 0, got tau={tau}, kappa={kappa}"));
    }
    let e = (-dt / tau).exp();
    Ok(Normal { mean: a + (z0 - a) * e, var: -kappa * (-2.0 * dt / tau).exp_m1() })
}

/// `(b, σ)` with `b = 1/τ` and `σ² = 2κ/τ`.
pub fn ou_derived(tau: f64, kappa: f64) -> (f64, f64) {
    (1.0 / tau, (2.0 * kappa / tau).sqrt())
}

/// Parameters at `row` on the natural scale, `θ = h⁻¹(x_rowᵀα + z_rowᵀβ)`,
/// where `gamma` stacks `α` then `β`.
pub fn param_at(family: Family, design: &DesignSet, gamma: &[f64], row: usize) -> Vec<f64> {
    family.natural(&design.eta(gamma, row))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Objective value with optional gradient and Hessian over all coefficients.
#[derive(Clone, Debug)]
pub struct LikEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl LikEval {
    pub fn zeros(n: usize, order: Order) -> Self {
        Self {
            value: 0.0,
            grad: DVector::zeros(if order >= Order::Gradient { n } else { 0 }),
            hess: if order >= Order::Hessian { DMatrix::zeros(n, n) } else { DMatrix::zeros(0, 0) },
        }
    }
}

/// Mean and variance of one transition with derivatives in the local
/// predictors (drift, scale₁, scale₂).
struct Local {
    m: f64,
    v: f64,
    dm: [f64; 3],
    dv: [f64; 3],
    hm: [[f64; 3]; 3],
    hv: [[f64; 3]; 3],
}

fn local_moments(family: Family, a: f64, p1: f64, p2: f64, z0: f64, dt: f64) -> Local {
    let mut l = Local { m: 0.0, v: 0.0, dm: [0.0; 3], dv: [0.0; 3], hm: [[0.0; 3]; 3], hv: [[0.0; 3]; 3] };
    if family.is_ou() {
        let (tau, kappa) = (p1.exp(), p2.exp());
        let u = dt / tau;
        let e = (-u).exp();
        let e2 = e * e;
        let d = z0 - a;
        l.m = a + d * e;
        l.v = -kappa * (-2.0 * u).exp_m1();
        l.dm = [1.0 - e, d * e * u, 0.0];
        l.hm[0][1] = -e * u;
        l.hm[1][0] = -e * u;
        l.hm[1][1] = d * e * u * (u - 1.0);
        let w = kappa * e2 * 2.0 * u;
        l.dv = [0.0, -w, l.v];
        l.hv[1][1] = -w * (2.0 * u - 1.0);
        l.hv[1][2] = -w;
        l.hv[2][1] = -w;
        l.hv[2][2] = l.v;
    } else {
        l.m = z0 + a * dt;
        l.v = (2.0 * p1).exp() * dt;
        l.dm = [dt, 0.0, 0.0];
        l.dv = [0.0, 2.0 * l.v, 0.0];
        l.hv[1][1] = 4.0 * l.v;
    }
    l
}

/// Accumulates `Σ_k w·g_k` and `Σ_kl w w' H_kl` through the sparse design rows.
pub(crate) fn scatter(
    out: &mut LikEval,
    design: &DesignSet,
    row: usize,
    g_eta: &[f64],
    h_eta: &[Vec<f64>],
    order: Order,
) {
    let np = g_eta.len();
    if order >= Order::Gradient {
        for k in 0..np {
            if g_eta[k] == 0.0 {
                continue;
            }
            for &(c, w) in design.row_entries(k, row) {
                out.grad[c] += w * g_eta[k];
            }
        }
    }
    if order >= Order::Hessian {
        for k in 0..np {
            let rk = design.row_entries(k, row);
            for l in 0..np {
                let hkl = h_eta[k][l];
                if hkl == 0.0 {
                    continue;
                }
                let rl = design.row_entries(l, row);
                for &(ci, wi) in rk {
                    let s = wi * hkl;
                    for &(cj, wj) in rl {
                        out.hess[(ci, cj)] += s * wj;
                    }
                }
            }
        }
    }
}

fn check_data(family: Family, design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> Result<()> {
    if data.dim() != family.dim() {
        return invalid(format!(
            "{family:?} needs {}-D observations, data have {}",
            family.dim(),
            data.dim()
        ));
    }
    if design.n_rows() != data.len() {
        return invalid("design and data row counts differ");
    }
    if gamma.len() != design.n_coef() {
        return invalid(format!("expected {} coefficients, got {}", design.n_coef(), gamma.len()));
    }
    if design.n_params() != family.n_params() {
        return invalid("design parameters do not match the SDE family");
    }
    Ok(())
}

/// Direct negative log-likelihood, conditional on the first observation of
/// each series, with derivatives in `γ` up to `order`.
pub fn neg_log_lik_derivs(
    family: Family,
    design: &DesignSet,
    data: &SeriesData,
    gamma: &[f64],
    order: Order,
) -> Result<LikEval> {
    check_data(family, design, data, gamma)?;
    let np = family.n_params();
    let mut out = LikEval::zeros(design.n_coef(), order);
    let mut g_eta = vec![0.0; np];
    let mut h_eta = vec![vec![0.0; np]; np];
    for range in data.series_ranges() {
        for i in range.start..range.end.saturating_sub(1) {
            let dt = data.time[i + 1] - data.time[i];
            if !(dt > 0.0) {
                return invalid(format!("times not strictly increasing at row {}", i + 1));
            }
            let eta = design.eta(gamma, i);
            g_eta.iter_mut().for_each(|v| *v = 0.0);
            h_eta.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
            for c in 0..family.dim() {
                let z0 = data.coords[c][i];
                let z = data.coords[c][i + 1];
                if !z0.is_finite() || !z.is_finite() {
                    return invalid(format!("missing observation at row {i} in a directly observed model"));
                }
                let idx = family.local_indices(c);
                let l = local_moments(family, eta[idx[0]], eta[idx[1]], eta[idx[2]], z0, dt);
                if !(l.v > 0.0) || !l.v.is_finite() {
                    return Err(Error::Numerical(format!("degenerate transition variance {} at row {i}", l.v)));
                }
                let r = z - l.m;
                let iv = 1.0 / l.v;
                out.value += 0.5 * ((2.0 * PI * l.v).ln() + r * r * iv);
                if order == Order::Value {
                    continue;
                }
                let gm = -r * iv;
                let gv = 0.5 * iv - 0.5 * r * r * iv * iv;
                let nloc = if family.is_ou() { 3 } else { 2 };
                for p in 0..nloc {
                    g_eta[idx[p]] += gm * l.dm[p] + gv * l.dv[p];
                }
                if order == Order::Hessian {
                    let hmm = iv;
                    let hmv = r * iv * iv;
                    let hvv = -0.5 * iv * iv + r * r * iv * iv * iv;
                    for p in 0..nloc {
                        for q in 0..nloc {
                            let h = hmm * l.dm[p] * l.dm[q]
                                + hmv * (l.dm[p] * l.dv[q] + l.dv[p] * l.dm[q])
                                + hvv * l.dv[p] * l.dv[q]
                                + gm * l.hm[p][q]
                                + gv * l.hv[p][q];
                            h_eta[idx[p]][idx[q]] += h;
                        }
                    }
                }
            }
            if order > Order::Value {
                scatter(&mut out, design, i, &g_eta, &h_eta, order);
            }
        }
    }
    Ok(out)
}

pub fn neg_log_lik(family: Family, design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> Result<f64> {
    Ok(neg_log_lik_derivs(family, design, data, gamma, Order::Value)?.value)
}

/// Exact sequential simulation. `params(i, t_i)` returns natural-scale
/// parameters for the interval starting at index `i`.
pub fn simulate<R, F>(family: Family, times: &[f64], z0: &[f64], params: F, rng: &mut R) -> Result<Vec<Vec<f64>>>
where
    R: Rng + ?Sized,
    F: Fn(usize, f64) -> Vec<f64>,
{
    if times.is_empty() {
        return invalid("empty time grid");
    }
    if z0.len() != family.dim() {
        return invalid(format!("initial state must have {} coordinates", family.dim()));
    }
    let n = times.len();
    let mut out: Vec<Vec<f64>> = z0.iter().map(|&z| {
        let mut v = Vec::with_capacity(n);
        v.push(z);
        v
    }).collect();
    for i in 0..n - 1 {
        let dt = times[i + 1] - times[i];
        if !(dt > 0.0) {
            return invalid(format!("times not strictly increasing at index {}", i + 1));
        }
        let theta = params(i, times[i]);
        for (c, path) in out.iter_mut().enumerate() {
            let law = family.transition(&theta, c, path[i], dt)?;
            path.push(law.sample(rng));
        }
    }
    Ok(out)
}

/// Simulates the rows `range` of `data` (one series) from the fitted
/// coefficients, starting at the observed first value.
pub fn simulate_range<R: Rng + ?Sized>(
    family: Family,
    design: &DesignSet,
    data: &SeriesData,
    gamma: &[f64],
    range: Range<usize>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if range.is_empty() {
        return invalid("empty series");
    }
    let z0: Vec<f64> = data.coords.iter().map(|c| c[range.start]).collect();
    let start = range.start;
    simulate(family, &data.time[range.clone()], &z0, |i, _| param_at(family, design, gamma, start + i), rng)
}

/// Simulates every series of `data` from the fitted coefficients.
pub fn simulate_from_coefficients<R: Rng + ?Sized>(
    family: Family,
    design: &DesignSet,
    data: &SeriesData,
    gamma: &[f64],
    rng: &mut R,
) -> Result<SeriesData> {
    check_data(family, design, data, gamma)?;
    let mut out = data.clone();
    for r in data.series_ranges() {
        let sim = simulate_range(family, design, data, gamma, r.clone(), rng)?;
        for (c, path) in sim.into_iter().enumerate() {
            out.coords[c][r.clone()].copy_from_slice(&path);
        }
    }
    Ok(out)
}
