//! Synthetic data sets: dive profiles laid out like a small tagging study,
//! and noisy two-dimensional OU tracks.

use crate::basis::{Formula, TermSpec};
use crate::data::{Column, Cov2, SeriesData};
use crate::error::{invalid, Result};
use crate::ssm::circular_cov;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// One tagged animal: observation count, dive count, exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct AnimalLayout {
    pub id: &'static str,
    pub n_obs: usize,
    pub n_dives: usize,
    /// One dive (the last) is exposed.
    pub exposed: bool,
}

pub const DIVE_STUDY: [AnimalLayout; 5] = [
    AnimalLayout { id: "zc10_272", n_obs: 1203, n_dives: 4, exposed: true },
    AnimalLayout { id: "zc11_267", n_obs: 1369, n_dives: 5, exposed: true },
    AnimalLayout { id: "zc13_210", n_obs: 610, n_dives: 2, exposed: false },
    AnimalLayout { id: "zc13_211", n_obs: 246, n_dives: 1, exposed: false },
    AnimalLayout { id: "zc17_234", n_obs: 262, n_dives: 1, exposed: false },
];

/// Proportion of an exposed dive after which exposure starts.
pub const EXPOSURE_START: f64 = 0.3;

fn baseline_log_sigma(p: f64) -> f64 {
    6f64.ln() + 0.5 * (PI * p).sin()
}

/// Deep foraging dives at 15-s resolution with time in 15-s steps.
///
/// Columns: `animal` and `dive` factors, `diveprop` (proportion of the
/// dive elapsed), `exposed` (1 from the exposure start of an exposed
/// dive onward). Depth in metres, positive down. Series are dives.
pub fn dive_study(seed: u64) -> SeriesData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut labels, mut animal, mut time, mut depth, mut prop, mut expo) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for a in &DIVE_STUDY {
        let base = a.n_obs / a.n_dives;
        let extra = a.n_obs % a.n_dives;
        for d in 0..a.n_dives {
            let n = base + (d >= a.n_dives - extra) as usize;
            let exposed = a.exposed && d == a.n_dives - 1;
            let max_depth = rng.random_range(900.0..1500.0);
            let amp = PI * max_depth / n as f64;
            let shift = 0.1 * rng.sample::<f64, _>(StandardNormal);
            let mut z = rng.random_range(2.0..8.0);
            for i in 0..n {
                let p = i as f64 / (n - 1) as f64;
                let on = exposed && p >= EXPOSURE_START;
                labels.push(format!("{}/{}", a.id, d + 1));
                animal.push(a.id.to_string());
                time.push(i as f64);
                depth.push(z);
                prop.push(p);
                expo.push(on as u8 as f64);
                let mut ls = baseline_log_sigma(p) + shift;
                if on {
                    ls += 0.6 * (2.0 * PI * (p - EXPOSURE_START) / (1.0 - EXPOSURE_START)).sin();
                }
                z += amp * (PI * p).cos() + ls.exp() * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let dive = Column::factor_from_labels(&labels);
    let mut data = SeriesData::new(&labels, time, vec![depth])
        .with_column("animal", Column::factor_from_labels(&animal))
        .with_column("dive", dive)
        .with_column("diveprop", Column::Numeric(prop))
        .with_column("exposed", Column::Numeric(expo));
    // keep study order rather than sorted labels
    let mut order: Vec<String> = Vec::new();
    for l in &labels {
        if order.last() != Some(l) {
            order.push(l.clone());
        }
    }
    let remap: Vec<usize> = data.series_names.iter().map(|n| order.iter().position(|o| o == n).unwrap()).collect();
    data.series = data.series.iter().map(|&s| remap[s]).collect();
    data.series_names = order;
    data
}

/// Dive model: `μ ~ s(diveprop)`, `log σ ~ 1 + re(dive) + s(diveprop)
/// + s(diveprop, by = exposed) per dive`.
pub fn dive_formulas() -> Vec<Formula> {
    vec![
        Formula::new("mu", vec![TermSpec::intercept(), TermSpec::spline("diveprop", 10)]),
        Formula::new(
            "sigma",
            vec![
                TermSpec::intercept(),
                TermSpec::random_intercept("dive"),
                TermSpec::spline("diveprop", 10),
                TermSpec::spline("diveprop", 10).by("exposed").by_factor("dive"),
            ],
        ),
    ]
}

/// Series codes of dives with no exposed rows.
pub fn baseline_dives(data: &SeriesData) -> Vec<usize> {
    let expo = data.numeric("exposed").unwrap_or(&[]);
    data.series_ranges()
        .iter()
        .enumerate()
        .filter(|(_, r)| expo.is_empty() || expo[(*r).clone()].iter().all(|v| *v == 0.0))
        .map(|(s, _)| s)
        .collect()
}

/// Constant-parameter OU track observed with isotropic error.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackConfig {
    pub n: usize,
    pub tau: f64,
    pub kappa: f64,
    pub centre: [f64; 2],
    /// Inclusive range of time steps.
    pub dt: (f64, f64),
    /// Error-circle radii drawn uniformly per observation.
    pub radii: Vec<f64>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { n: 2000, tau: 10.0, kappa: 1000.0, centre: [0.0, 0.0], dt: (0.25, 1.75), radii: vec![5.0, 10.0, 20.0] }
    }
}

/// Simulated track with its latent states. The first state is drawn from
/// the stationary law.
pub fn ou_track(cfg: &TrackConfig, seed: u64) -> Result<(SeriesData, Vec<[f64; 2]>)> {
    if cfg.n < 2 || !(cfg.tau > 0.0 && cfg.kappa > 0.0) || cfg.radii.is_empty() || !(cfg.dt.0 > 0.0 && cfg.dt.1 >= cfg.dt.0) {
        return invalid("invalid track configuration");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd0 = cfg.kappa.sqrt();
    let mut state = [0.0; 2];
    for c in 0..2 {
        state[c] = cfg.centre[c] + sd0 * rng.sample::<f64, _>(StandardNormal);
    }
    let mut t = 0.0;
    let (mut time, mut xs, mut ys, mut covs, mut states) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..cfg.n {
        if i > 0 {
            let dt = if cfg.dt.1 > cfg.dt.0 { rng.random_range(cfg.dt.0..cfg.dt.1) } else { cfg.dt.0 };
            t += dt;
            let e = (-dt / cfg.tau).exp();
            let sd = (-cfg.kappa * (-2.0 * dt / cfg.tau).exp_m1()).sqrt();
            for c in 0..2 {
                state[c] = cfg.centre[c] + (state[c] - cfg.centre[c]) * e + sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let r = cfg.radii[rng.random_range(0..cfg.radii.len())];
        let cov: Cov2 = circular_cov(r);
        let s = cov.xx.sqrt();
        time.push(t);
        xs.push(state[0] + s * rng.sample::<f64, _>(StandardNormal));
        ys.push(state[1] + s * rng.sample::<f64, _>(StandardNormal));
        covs.push(cov);
        states.push(state);
    }
    let labels = vec!["track".to_string(); cfg.n];
    Ok((SeriesData::new(&labels, time, vec![xs, ys]).with_obs_cov(covs), states))
}
