//! Simulation study: a baseline Brownian motion whose diffusion changes
//! shape after a switch, fitted repeatedly with a difference smooth.

use crate::basis::{Formula, Scenario, TermBasis, TermSpec};
use crate::data::{Column, SeriesData};
use crate::error::{invalid, Result};
use crate::estimate::{fit, FitConfig, Model, Observation};
use crate::sde::Family;
use crate::uncertainty::{bands, linspace, quantile, BandSpec, BandTarget};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Response,
}

/// True diffusion `σ(x)` for `x ∈ [0, 1]`.
pub fn gen_truth(x: f64, phase: Phase) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return invalid(format!("x = {x} outside [0, 1]"));
    }
    Ok(match phase {
        Phase::Baseline => 0.5 - 1.5 * (x - 0.5).powi(2),
        Phase::Response => 0.05 + 5.0 * (x - 0.5).powi(2),
    })
}

/// `log σ_R(x) − log σ_B(x)`, the target of the difference smooth.
pub fn true_difference(x: f64) -> f64 {
    (gen_truth(x, Phase::Response).unwrap() / gen_truth(x, Phase::Baseline).unwrap()).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub replicates: usize,
    pub baseline_series: usize,
    pub switching_series: usize,
    pub n_per_series: usize,
    pub t_max: f64,
    pub threshold: f64,
    pub basis_dim: usize,
    pub draws: usize,
    pub level: f64,
    pub grid_size: usize,
    /// Fitted smooths kept for the ensemble export.
    pub ensemble_size: usize,
    /// Baseline RMSE is computed over this range of `x`.
    pub rmse_range: (f64, f64),
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let mut fit = FitConfig::default();
        fit.intercept_init.insert("sigma".into(), 0.3);
        Self {
            replicates: 200,
            baseline_series: 8,
            switching_series: 1,
            n_per_series: 200,
            t_max: 10.0,
            threshold: 0.25,
            basis_dim: 10,
            draws: 1000,
            level: 0.95,
            grid_size: 100,
            ensemble_size: 50,
            rmse_range: (0.05, 0.95),
            seed: 2017,
            fit,
        }
    }
}

impl StudyConfig {
    /// The full-size run with 2000 replicates.
    pub fn full() -> Self {
        Self { replicates: 2000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return invalid("need at least one replicate");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return invalid("threshold must lie in [0, 1]");
        }
        if self.n_per_series < 3 || self.baseline_series + self.switching_series == 0 {
            return invalid("series too short or no series");
        }
        if !(self.t_max > 0.0) || self.grid_size < 2 {
            return invalid("bad time span or grid size");
        }
        Ok(())
    }

    /// Seed of replicate `r`: the master seed on stream `r + 1`.
    pub fn replicate_rng(&self, r: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r as u64 + 1);
        rng
    }
}

/// One dataset: baseline series then switching series (`switch = false`
/// keeps every series on the baseline law). Columns `x = t / t_max` and
/// `expo` (switched-state indicator at each row).
pub fn gen_replicate_with(cfg: &StudyConfig, rng: &mut ChaCha8Rng, switch: bool) -> Result<SeriesData> {
    cfg.validate()?;
    let total = cfg.baseline_series + cfg.switching_series;
    let n = cfg.n_per_series;
    let (mut labels, mut time, mut z, mut xs, mut expo) = (vec![], vec![], vec![], vec![], vec![]);
    for s in 0..total {
        let switching = switch && s >= cfg.baseline_series;
        let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..cfg.t_max)).collect();
        t.sort_by(|a, b| a.total_cmp(b));
        let mut cur = 0.0;
        for i in 0..n {
            let x = t[i] / cfg.t_max;
            let on = switching && x >= cfg.threshold;
            if i > 0 {
                let sigma = gen_truth(xs[xs.len() - 1], if expo[expo.len() - 1] > 0.0 { Phase::Response } else { Phase::Baseline })?;
                let dt = t[i] - t[i - 1];
                cur += sigma * dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(format!("s{s}"));
            time.push(t[i]);
            z.push(cur);
            xs.push(x);
            expo.push(on as u8 as f64);
        }
    }
    let mut data = SeriesData::new(&labels, time, vec![z]).with_column("x", Column::Numeric(xs)).with_column("expo", Column::Numeric(expo));
    data.series_names = (0..total).map(|s| format!("s{s}")).collect();
    data.validate()?;
    Ok(data)
}

/// Dataset of replicate `r`.
pub fn gen_replicate(cfg: &StudyConfig, r: usize) -> Result<SeriesData> {
    gen_replicate_with(cfg, &mut cfg.replicate_rng(r), true)
}

pub fn study_formulas(cfg: &StudyConfig) -> Vec<Formula> {
    vec![
        Formula::intercept_only("mu"),
        Formula::new(
            "sigma",
            vec![
                TermSpec::intercept(),
                TermSpec::linear("expo"),
                TermSpec::spline("x", cfg.basis_dim),
                TermSpec::spline("x", cfg.basis_dim).by("expo"),
            ],
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub converged: bool,
    pub covered: bool,
    pub rmse_baseline: f64,
    pub rmse_difference: f64,
    /// Estimated `log σ_B` on the common baseline grid.
    pub baseline: Vec<f64>,
    /// Estimated difference on the common difference grid.
    pub difference: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub curves: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub q10: Vec<f64>,
    pub q90: Vec<f64>,
    pub q975: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<Failure>,
    pub coverage: f64,
    pub median_rmse_baseline: f64,
    pub baseline: Ensemble,
    pub difference: Ensemble,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Fits one replicate and evaluates recovery and band coverage.
pub fn run_replicate(cfg: &StudyConfig, r: usize) -> Result<ReplicateRecord> {
    let data = gen_replicate(cfg, r)?;
    let model = Model::new(Family::Bm, study_formulas(cfg), data, Observation::Exact)?;
    let res = fit(&model, &cfg.fit)?;
    let d = &model.design;
    let base_ids = [d.term_id("sigma:(Intercept)")?, d.term_id("sigma:s(x)")?];
    let diff_ids = vec![d.term_id("sigma:expo")?, d.term_id("sigma:s(x):by=expo")?];
    let (lo, hi) = match &d.term(diff_ids[1])?.basis {
        TermBasis::Spline { lo, hi, .. } => (*lo, *hi),
        _ => unreachable!(),
    };
    let gamma = DVector::from_vec(res.gamma());

    let base_grid = linspace(0.0, 1.0, cfg.grid_size);
    let base_est = d.terms_matrix(&base_ids, &Scenario::new("x", base_grid.clone()))? * &gamma;
    let diff_grid = linspace(cfg.threshold, 1.0, cfg.grid_size);
    let clamped: Vec<f64> = diff_grid.iter().map(|x| x.clamp(lo, hi)).collect();
    let diff_est = d.terms_matrix(&diff_ids, &Scenario::new("x", clamped))? * &gamma;

    let (a, b) = cfg.rmse_range;
    let inner: Vec<usize> = (0..base_grid.len()).filter(|&i| base_grid[i] >= a && base_grid[i] <= b).collect();
    let est_in: Vec<f64> = inner.iter().map(|&i| base_est[i]).collect();
    let true_in: Vec<f64> = inner.iter().map(|&i| gen_truth(base_grid[i], Phase::Baseline).unwrap().ln()).collect();
    let diff_truth: Vec<f64> = diff_grid.iter().map(|x| true_difference(*x)).collect();

    let active = linspace(lo, hi, cfg.grid_size);
    let mut spec = BandSpec::new(BandTarget::Terms(diff_ids), "x", active.clone(), cfg.level, cfg.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    spec.draws = cfg.draws;
    let (_, simult) = bands(&model, &res, &spec)?;
    let truth_active: Vec<f64> = active.iter().map(|x| true_difference(*x)).collect();

    Ok(ReplicateRecord {
        replicate: r,
        converged: res.converged(),
        covered: simult.contains(&truth_active),
        rmse_baseline: rmse(&est_in, &true_in),
        rmse_difference: rmse(diff_est.as_slice(), &diff_truth),
        baseline: base_est.iter().copied().collect(),
        difference: diff_est.iter().copied().collect(),
    })
}

fn ensemble(grid: Vec<f64>, truth: Vec<f64>, curves: &[&Vec<f64>], keep: usize) -> Ensemble {
    let m = grid.len();
    let col = |i: usize| -> Vec<f64> { curves.iter().map(|c| c[i]).collect() };
    let q = |p: f64| -> Vec<f64> {
        (0..m).map(|i| if curves.is_empty() { f64::NAN } else { quantile(&col(i), p) }).collect()
    };
    Ensemble {
        mean: (0..m).map(|i| col(i).iter().sum::<f64>() / curves.len() as f64).collect(),
        q025: q(0.025),
        q10: q(0.10),
        q90: q(0.90),
        q975: q(0.975),
        curves: curves.iter().take(keep).map(|c| (*c).clone()).collect(),
        grid,
        truth,
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let outcomes: Vec<Result<ReplicateRecord>> = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push(Failure { replicate: r, message: e.to_string() });
            }
        }
    }
    let ok = records.len().max(1) as f64;
    let coverage = records.iter().filter(|r| r.covered).count() as f64 / ok;
    let rm: Vec<f64> = records.iter().map(|r| r.rmse_baseline).collect();
    let median_rmse_baseline = if rm.is_empty() { f64::NAN } else { quantile(&rm, 0.5) };
    let base_grid = linspace(0.0, 1.0, cfg.grid_size);
    let diff_grid = linspace(cfg.threshold, 1.0, cfg.grid_size);
    let base_truth = base_grid.iter().map(|x| gen_truth(*x, Phase::Baseline).unwrap().ln()).collect();
    let diff_truth = diff_grid.iter().map(|x| true_difference(*x)).collect();
    let bc: Vec<&Vec<f64>> = records.iter().map(|r| &r.baseline).collect();
    let dc: Vec<&Vec<f64>> = records.iter().map(|r| &r.difference).collect();
    Ok(StudyReport {
        baseline: ensemble(base_grid, base_truth, &bc, cfg.ensemble_size),
        difference: ensemble(diff_grid, diff_truth, &dc, cfg.ensemble_size),
        config: cfg.clone(),
        records,
        failures,
        coverage,
        median_rmse_baseline,
    })
}
