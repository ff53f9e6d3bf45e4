//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use vcsde::basis::{build_design, DesignSet, Formula, TermSpec};
use vcsde::data::{Column, Cov2, SeriesData};
use vcsde::estimate::{Model, Observation};
use vcsde::sde::{param_at, simulate, Family};

pub fn mvn_logpdf(z: &DVector<f64>, mu: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let ch = s.clone().cholesky().expect("covariance not PD");
    let r = z - mu;
    let sol = ch.solve(&r);
    let logdet = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (r.len() as f64 * (2.0 * PI).ln() + logdet + r.dot(&sol))
}

/// Latent mean and covariance of a single 2-D OU series (state ordering
/// `(row, coordinate)`), with the first state drawn from `N(z̃₁, Ω₁ + κ₁I)`.
pub fn ou2_latent(design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.len();
    let om: Vec<Cov2> = data.obs_cov.clone().unwrap_or_else(|| vec![Cov2::default(); n]);
    let th: Vec<Vec<f64>> = (0..n).map(|i| param_at(Family::Ou2, design, gamma, i)).collect();
    let mut mu = DVector::zeros(2 * n);
    let mut var: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    mu[0] = data.coords[0][0];
    mu[1] = data.coords[1][0];
    let k0 = th[0][3];
    var.push(DMatrix::from_row_slice(2, 2, &[om[0].xx + k0, om[0].xy, om[0].xy, om[0].yy + k0]));
    let mut decay = vec![0.0; n];
    for i in 0..n - 1 {
        let dt = data.time[i + 1] - data.time[i];
        let e = (-dt / th[i][2]).exp();
        decay[i] = e;
        let q = th[i][3] * (1.0 - e * e);
        for c in 0..2 {
            mu[2 * (i + 1) + c] = e * mu[2 * i + c] + (1.0 - e) * th[i][c];
        }
        var.push(&var[i] * (e * e) + DMatrix::identity(2, 2) * q);
    }
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in i..n {
            let f: f64 = (i..j).map(|k| decay[k]).product();
            let b = &var[i] * f;
            for a in 0..2 {
                for c in 0..2 {
                    cov[(2 * j + a, 2 * i + c)] = b[(a, c)];
                    cov[(2 * i + c, 2 * j + a)] = b[(a, c)];
                }
            }
        }
    }
    (mu, cov)
}

fn obs_vector(data: &SeriesData) -> DVector<f64> {
    DVector::from_iterator(2 * data.len(), (0..data.len()).flat_map(|i| [data.coords[0][i], data.coords[1][i]]))
}

fn with_noise(data: &SeriesData, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = cov.clone();
    if let Some(om) = &data.obs_cov {
        for (i, o) in om.iter().enumerate() {
            s[(2 * i, 2 * i)] += o.xx;
            s[(2 * i, 2 * i + 1)] += o.xy;
            s[(2 * i + 1, 2 * i)] += o.xy;
            s[(2 * i + 1, 2 * i + 1)] += o.yy;
        }
    }
    s
}

/// Conditional log-likelihood `log N(z̃) − log N(z̃₁)` from the dense joint law.
pub fn dense_ou2_loglik(design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> f64 {
    let (mu, cov) = ou2_latent(design, data, gamma);
    let s = with_noise(data, &cov);
    let z = obs_vector(data);
    let full = mvn_logpdf(&z, &mu, &s);
    let first = mvn_logpdf(&z.rows(0, 2).into_owned(), &mu.rows(0, 2).into_owned(), &s.view((0, 0), (2, 2)).into_owned());
    full - first
}

/// `E[s | z̃]` from the dense joint law, one 2-vector per row.
pub fn dense_ou2_smooth(design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> Vec<[f64; 2]> {
    let (mu, cov) = ou2_latent(design, data, gamma);
    let s = with_noise(data, &cov);
    let z = obs_vector(data);
    let w = s.clone().cholesky().unwrap().solve(&(z - &mu));
    let m = &mu + &cov * w;
    (0..data.len()).map(|i| [m[2 * i], m[2 * i + 1]]).collect()
}

/// Random OU2 instance: one series, parameters linear in a covariate,
/// random PSD error covariances.
pub fn random_ou2(seed: u64, n: usize) -> (DesignSet, SeriesData, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![0.0];
    for _ in 1..n {
        let last = *t.last().unwrap();
        t.push(last + rng.random_range(0.05..2.0));
    }
    let x: Vec<f64> = t.iter().map(|v| v / t[n - 1]).collect();
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let om: Vec<Cov2> = (0..n)
        .map(|_| {
            let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
            Cov2::new(a[0] * a[0] + a[1] * a[1], a[0] * a[2] + a[1] * a[3], a[2] * a[2] + a[3] * a[3])
        })
        .collect();
    let labels = vec!["s".to_string(); n];
    let data = SeriesData::new(&labels, t, vec![xs, ys])
        .with_column("x", Column::Numeric(x))
        .with_obs_cov(om);
    let formulas: Vec<Formula> = ["mu_x", "mu_y", "tau", "kappa"]
        .iter()
        .map(|p| Formula::new(p, vec![TermSpec::intercept(), TermSpec::linear("x")]))
        .collect();
    let design = build_design(Family::Ou2.param_names(), &formulas, &data).unwrap();
    let gamma = vec![
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.0..1.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(0.0..2.0),
        rng.random_range(-0.5..0.5),
    ];
    (design, data, gamma)
}

/// Exact marginal nll of a BM random-intercept drift model: increments are
/// jointly Gaussian with covariance `diag(σᵢ²Δᵢ) + λ⁻¹ A Aᵀ`.
pub fn closed_form_ri_bm(data: &SeriesData, group: &str, mu0: f64, sigma: &[f64], lambda: f64) -> f64 {
    let (levels, codes) = data.factor(group).unwrap();
    let mut d = Vec::new();
    let mut dt = Vec::new();
    let mut g = Vec::new();
    let mut s = Vec::new();
    for r in data.series_ranges() {
        for i in r.start..r.end - 1 {
            d.push(data.coords[0][i + 1] - data.coords[0][i]);
            dt.push(data.time[i + 1] - data.time[i]);
            g.push(codes[i]);
            s.push(sigma[i]);
        }
    }
    let m = d.len();
    let a = DMatrix::from_fn(m, levels.len(), |i, l| if g[i] == l { dt[i] } else { 0.0 });
    let mut cov = (&a * a.transpose()) / lambda;
    for i in 0..m {
        cov[(i, i)] += s[i] * s[i] * dt[i];
    }
    let mean = DVector::from_iterator(m, dt.iter().map(|v| v * mu0));
    -mvn_logpdf(&DVector::from_vec(d), &mean, &cov)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grouped BM with a per-group drift offset and a time covariate `x`.
pub fn grouped_bm(seed: u64, groups: usize, per: usize, sd_re: f64, sigma: f64) -> SeriesData {
    let mut r = rng(seed);
    let mut labels = Vec::new();
    let mut t = Vec::new();
    let mut z = Vec::new();
    let mut g = Vec::new();
    let mut x = Vec::new();
    for k in 0..groups {
        let b = sd_re * rng_normal(&mut r);
        let mut times = vec![0.0];
        for _ in 1..per {
            let l = *times.last().unwrap();
            times.push(l + r.random_range(0.2..1.5));
        }
        let path = simulate(Family::Bm, &times, &[0.0], |_, _| vec![0.3 + b, sigma], &mut r).unwrap();
        for (i, ti) in times.iter().enumerate() {
            labels.push(format!("s{k}"));
            g.push(format!("g{k}"));
            t.push(*ti);
            z.push(path[0][i]);
            x.push(ti / times[per - 1]);
        }
    }
    SeriesData::new(&labels, t, vec![z])
        .with_column("g", Column::factor_from_labels(&g))
        .with_column("x", Column::Numeric(x))
}

pub fn rng_normal(r: &mut impl Rng) -> f64 {
    r.sample(rand_distr::StandardNormal)
}

pub fn ri_model(data: SeriesData) -> Model {
    Model::new(
        Family::Bm,
        vec![
            Formula::new("mu", vec![TermSpec::intercept(), TermSpec::random_intercept("g")]),
            Formula::new("sigma", vec![TermSpec::intercept(), TermSpec::linear("x")]),
        ],
        data,
        Observation::Exact,
    )
    .unwrap()
}

pub fn drift_truth(x: f64) -> f64 {
    2.0 * (6.0 * x).sin()
}

/// BM with drift `drift_truth(t / t_max)` and constant `sigma`; covariate `x = t / t_max`.
pub fn spline_drift_data(seed: u64, n: usize, sigma: f64) -> SeriesData {
    let mut r = rng(seed);
    let mut t = vec![0.0];
    for _ in 1..n {
        let l = *t.last().unwrap();
        t.push(l + r.random_range(0.1..1.0));
    }
    let tmax = t[n - 1];
    let path = simulate(Family::Bm, &t, &[0.0], |_, ti| vec![drift_truth(ti / tmax), sigma], &mut r).unwrap();
    let x: Vec<f64> = t.iter().map(|v| v / tmax).collect();
    SeriesData::single(t, path[0].clone()).with_column("x", Column::Numeric(x))
}

pub fn drift_model(data: SeriesData) -> Model {
    Model::new(
        Family::Bm,
        vec![
            Formula::new("mu", vec![TermSpec::intercept(), TermSpec::spline("x", 10)]),
            Formula::intercept_only("sigma"),
        ],
        data,
        Observation::Exact,
    )
    .unwrap()
}

/// Drift-spline fit with `σ` held at its true value.
pub fn drift_fit(model: &Model, sigma: f64) -> vcsde::estimate::FitResult {
    let mut cfg = vcsde::estimate::FitConfig::default();
    cfg.intercept_init.insert("sigma".into(), sigma);
    cfg.fixed = vec![model.fixed_index("sigma:(Intercept)").unwrap()];
    vcsde::estimate::fit(model, &cfg).unwrap()
}
