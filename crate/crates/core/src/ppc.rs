//! Posterior predictive checks with dive summary statistics.

use crate::error::{invalid, Error, Result};
use crate::estimate::{FitResult, Model};
use crate::sde::simulate_range;
use crate::uncertainty::mvn_draws;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Dive summary statistics on a depth series (metres, positive down).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiveStat {
    /// Proportion of steps with `D[i+1] > D[i] + 10`.
    DepthIncreasing,
    /// Proportion of steps with `D[i+1] < D[i] - 10`.
    DepthDecreasing,
    MaxDepth,
    Deeper500,
    Deeper1000,
    /// Proportion of consecutive step pairs whose depth change has the same
    /// strict sign; zero changes break persistence.
    Persistence,
}

impl DiveStat {
    pub const ALL: [DiveStat; 6] = [
        DiveStat::DepthIncreasing,
        DiveStat::DepthDecreasing,
        DiveStat::MaxDepth,
        DiveStat::Deeper500,
        DiveStat::Deeper1000,
        DiveStat::Persistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DiveStat::DepthIncreasing => "depth_increasing",
            DiveStat::DepthDecreasing => "depth_decreasing",
            DiveStat::MaxDepth => "max_depth",
            DiveStat::Deeper500 => "deeper_500",
            DiveStat::Deeper1000 => "deeper_1000",
            DiveStat::Persistence => "persistence",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dive statistic `{s}`")))
    }

    pub fn compute(self, depth: &[f64]) -> Result<f64> {
        let n = depth.len();
        if n < 3 {
            return invalid(format!("dive statistics need at least 3 samples, got {n}"));
        }
        let steps = (n - 1) as f64;
        let frac = |c: usize, d: f64| c as f64 / d;
        Ok(match self {
            DiveStat::DepthIncreasing => frac(depth.windows(2).filter(|w| w[1] > w[0] + 10.0).count(), steps),
            DiveStat::DepthDecreasing => frac(depth.windows(2).filter(|w| w[1] < w[0] - 10.0).count(), steps),
            DiveStat::MaxDepth => depth.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            DiveStat::Deeper500 => frac(depth.iter().filter(|d| **d > 500.0).count(), n as f64),
            DiveStat::Deeper1000 => frac(depth.iter().filter(|d| **d > 1000.0).count(), n as f64),
            DiveStat::Persistence => {
                let sign: Vec<i8> = depth.windows(2).map(|w| (w[1] > w[0]) as i8 - (w[1] < w[0]) as i8).collect();
                frac(sign.windows(2).filter(|s| s[0] != 0 && s[0] == s[1]).count(), (n - 2) as f64)
            }
        })
    }
}

/// All six statistics, in [`DiveStat::ALL`] order.
pub fn dive_stats(depth: &[f64]) -> Result<Vec<(DiveStat, f64)>> {
    DiveStat::ALL.iter().map(|s| Ok((*s, s.compute(depth)?))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    Upper,
    Lower,
}

/// Proportion of simulated values at least as extreme as `observed`.
pub fn p_value(observed: f64, simulated: &[f64], side: Sidedness) -> f64 {
    let k = simulated.len() as f64;
    let le = simulated.iter().filter(|v| **v <= observed).count() as f64 / k;
    let ge = simulated.iter().filter(|v| **v >= observed).count() as f64 / k;
    match side {
        Sidedness::TwoSided => (2.0 * le.min(ge)).min(1.0),
        Sidedness::Upper => ge,
        Sidedness::Lower => le,
    }
}

/// Equal-width histogram over the range of `values`.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (vec![], vec![]);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let w = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + w * i as f64).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (edges, counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcConfig {
    /// Series codes (in the model data) whose time grids and covariates
    /// serve as simulation templates; also the observed series.
    pub template: Vec<usize>,
    pub stats: Vec<DiveStat>,
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub sidedness: Sidedness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcStatResult {
    pub name: String,
    pub observed: f64,
    pub simulated: Vec<f64>,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub draws: usize,
    pub sidedness: Sidedness,
    pub stats: Vec<PpcStatResult>,
    pub warnings: Vec<String>,
}

impl PpcReport {
    pub fn get(&self, stat: DiveStat) -> Option<&PpcStatResult> {
        self.stats.iter().find(|s| s.name == stat.name())
    }
}

/// Statistics averaged over the template series of `depth`.
fn template_stats(model: &Model, depth: &[f64], template: &[usize], stats: &[DiveStat]) -> Result<Vec<f64>> {
    let ranges = model.data.series_ranges();
    let mut acc = vec![0.0; stats.len()];
    for &s in template {
        let d = &depth[ranges[s].clone()];
        for (a, st) in acc.iter_mut().zip(stats) {
            *a += st.compute(d)?;
        }
    }
    Ok(acc.into_iter().map(|a| a / template.len() as f64).collect())
}

/// Simulates the template series once from coefficients `gamma` and returns
/// the template-averaged statistics.
pub fn simulate_stats(model: &Model, gamma: &[f64], cfg: &PpcConfig, stream: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let ranges = model.data.series_ranges();
    let mut depth = model.data.coords[0].clone();
    for &s in &cfg.template {
        let sim = simulate_range(model.family, &model.design, &model.data, gamma, ranges[s].clone(), &mut rng)?;
        depth[ranges[s].clone()].copy_from_slice(&sim[0]);
    }
    template_stats(model, &depth, &cfg.template, &cfg.stats)
}

fn check(model: &Model, cfg: &PpcConfig) -> Result<()> {
    if cfg.stats.is_empty() {
        return invalid("empty statistics list");
    }
    if cfg.template.is_empty() {
        return invalid("empty template");
    }
    if model.family.dim() != 1 {
        return invalid("dive statistics need one-dimensional series");
    }
    if let Some(s) = cfg.template.iter().find(|s| **s >= model.data.n_series()) {
        return invalid(format!("template series {s} out of range"));
    }
    if cfg.draws < 1 {
        return invalid("need at least one simulated series");
    }
    Ok(())
}

/// Posterior predictive check of the model's own data.
pub fn ppc_run(model: &Model, fit: &FitResult, cfg: &PpcConfig) -> Result<PpcReport> {
    ppc_compare(model, fit, &model.data.coords[0], cfg)
}

/// Posterior predictive check of `observed` depths laid out like the
/// model data.
pub fn ppc_compare(model: &Model, fit: &FitResult, observed: &[f64], cfg: &PpcConfig) -> Result<PpcReport> {
    check(model, cfg)?;
    if observed.len() != model.data.len() {
        return invalid("observed depths do not match the model data layout");
    }
    let obs = template_stats(model, observed, &cfg.template, &cfg.stats)?;
    let (draws, mut warnings) = mvn_draws(&fit.gamma(), &fit.covariance, cfg.draws, cfg.seed)?;
    if cfg.draws == 1 {
        let msg = "a single simulated series gives a degenerate p-value".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let sims: Result<Vec<Vec<f64>>> = (0..cfg.draws)
        .into_par_iter()
        .map(|k| {
            let g: Vec<f64> = draws.row(k).iter().copied().collect();
            simulate_stats(model, &g, cfg, k as u64 + 1)
        })
        .collect();
    let sims = sims?;
    let stats = cfg
        .stats
        .iter()
        .enumerate()
        .map(|(j, st)| {
            let simulated: Vec<f64> = sims.iter().map(|s| s[j]).collect();
            PpcStatResult {
                name: st.name().to_string(),
                observed: obs[j],
                p_value: p_value(obs[j], &simulated, cfg.sidedness),
                simulated,
            }
        })
        .collect();
    Ok(PpcReport { draws: cfg.draws, sidedness: cfg.sidedness, stats, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_descent() {
        let d: Vec<f64> = (0..=15).map(|i| 100.0 * i as f64).collect();
        let s = dive_stats(&d).unwrap();
        assert_eq!(s[0].1, 1.0);
        assert_eq!(s[1].1, 0.0);
        assert_eq!(s[2].1, 1500.0);
        assert_eq!(s[5].1, 1.0);
    }

    #[test]
    fn constant_depth() {
        let s = dive_stats(&[0.0; 10]).unwrap();
        for (st, v) in s {
            assert_eq!(v, 0.0, "{}", st.name());
        }
    }

    #[test]
    fn too_short() {
        assert!(dive_stats(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn p_values() {
        let sims: Vec<f64> = (0..101).map(|i| i as f64).collect();
        assert_eq!(p_value(50.0, &sims, Sidedness::TwoSided), 1.0);
        assert_eq!(p_value(-1.0, &sims, Sidedness::TwoSided), 0.0);
        assert_eq!(p_value(1.0, &[0.0], Sidedness::TwoSided), 0.0);
        assert_eq!(p_value(0.0, &[0.0], Sidedness::TwoSided), 1.0);
        assert!((p_value(100.0, &sims, Sidedness::Upper) - 1.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts() {
        let (e, c) = histogram(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(e, vec![0.0, 0.5, 1.0]);
        assert_eq!(c, vec![1, 3]);
    }
}
