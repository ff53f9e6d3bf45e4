mod common;

use common::*;
use std::time::Instant;
use vcsde::data::SeriesData;
use vcsde::ppc::{ppc_run, DiveStat, PpcConfig, Sidedness};
use vcsde::simstudy::{gen_replicate, gen_replicate_with, gen_truth, run_replicate, run_study, Phase, StudyConfig};

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Increments scaled by `√Δt` for every series.
fn scaled_increments(d: &SeriesData) -> Vec<Vec<f64>> {
    d.series_ranges()
        .into_iter()
        .map(|r| (r.start..r.end - 1).map(|i| (d.coords[0][i + 1] - d.coords[0][i]) / (d.time[i + 1] - d.time[i]).sqrt()).collect())
        .collect()
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let cfg = StudyConfig::default();
    let a = gen_replicate(&cfg, 3).unwrap();
    let b = gen_replicate(&cfg, 3).unwrap();
    assert_eq!(a.time, b.time);
    assert_eq!(a.coords, b.coords);
    assert_ne!(gen_replicate(&cfg, 4).unwrap().coords, a.coords);
}

#[test]
fn without_switch_the_last_series_is_exchangeable_with_baseline() {
    let cfg = StudyConfig::default();
    let reps = 200;
    let mut rejected = 0;
    for r in 0..reps {
        let d = gen_replicate_with(&cfg, &mut cfg.replicate_rng(r), false).unwrap();
        let inc = scaled_increments(&d);
        let last = inc.last().unwrap();
        let pooled: Vec<f64> = inc[..inc.len() - 1].concat();
        let (n, m) = (last.len() as f64, pooled.len() as f64);
        // 1% two-sample critical value
        if ks_statistic(last, &pooled) > 1.628 * ((n + m) / (n * m)).sqrt() {
            rejected += 1;
        }
    }
    assert!(rejected as f64 / reps as f64 <= 0.05, "{rejected} of {reps} rejected");
}

#[test]
fn standardized_increments_have_unit_variance() {
    let cfg = StudyConfig::default();
    for r in 0..20 {
        let d = gen_replicate(&cfg, r).unwrap();
        let x = d.numeric("x").unwrap();
        let e = d.numeric("expo").unwrap();
        let mut ss = 0.0;
        let mut n = 0;
        for rg in d.series_ranges() {
            for i in rg.start..rg.end - 1 {
                let phase = if e[i] > 0.0 { Phase::Response } else { Phase::Baseline };
                let s = gen_truth(x[i], phase).unwrap();
                let z = (d.coords[0][i + 1] - d.coords[0][i]) / (s * (d.time[i + 1] - d.time[i]).sqrt());
                ss += z * z;
                n += 1;
            }
        }
        let v = ss / n as f64;
        assert!((0.9..=1.1).contains(&v), "replicate {r}: {v}");
    }
}

#[test]
fn single_replicate_runs_quickly() {
    let cfg = StudyConfig::default();
    let start = Instant::now();
    let rec = run_replicate(&cfg, 0).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert!(rec.converged);
    assert_eq!(rec.baseline.len(), cfg.grid_size);
    assert!(rec.rmse_baseline.is_finite() && rec.rmse_difference.is_finite());
}

#[test]
fn small_study_is_a_pure_function_of_its_config() {
    let cfg = StudyConfig { replicates: 3, draws: 200, ..StudyConfig::default() };
    let a = run_study(&cfg).unwrap();
    let b = run_study(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len() + a.failures.len(), 3);
    let other = run_study(&StudyConfig { seed: cfg.seed + 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.records[0].baseline, other.records[0].baseline);
}

#[test]
fn outer_trace_never_increases() {
    let model = drift_model(spline_drift_data(7, 400, 0.7));
    let res = drift_fit(&model, 0.7);
    let t = &res.convergence.trace;
    assert!(t.len() >= 2);
    for w in t.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{:?}", t);
    }
}

#[test]
fn ppc_is_deterministic_given_seed() {
    let model = drift_model(spline_drift_data(8, 150, 0.7));
    let res = drift_fit(&model, 0.7);
    let cfg = PpcConfig { template: vec![0], stats: DiveStat::ALL.to_vec(), draws: 40, seed: 21, sidedness: Sidedness::TwoSided };
    let a = ppc_run(&model, &res, &cfg).unwrap();
    let b = ppc_run(&model, &res, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.stats.len(), 6);
    let c = ppc_run(&model, &res, &PpcConfig { seed: 22, ..cfg.clone() }).unwrap();
    assert_ne!(a.stats[2].simulated, c.stats[2].simulated);
}
