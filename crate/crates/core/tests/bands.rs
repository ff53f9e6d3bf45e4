mod common;

use common::*;
use nalgebra::DMatrix;
use vcsde::uncertainty::{bands, linspace, pointwise_band, BandSpec, BandTarget};

const SIGMA: f64 = 0.7;

fn mu_spec(grid: Vec<f64>, level: f64, seed: u64) -> BandSpec {
    BandSpec::new(BandTarget::Parameter(0), "x", grid, level, seed)
}

#[test]
fn zero_covariance_collapses_bands_to_the_estimate() {
    let model = drift_model(spline_drift_data(1, 200, SIGMA));
    let mut res = drift_fit(&model, SIGMA);
    let n = res.covariance.nrows();
    res.covariance = DMatrix::zeros(n, n);
    let (pw, si) = bands(&model, &res, &mu_spec(linspace(0.0, 1.0, 30), 0.95, 1)).unwrap();
    for b in [&pw, &si] {
        for i in 0..b.grid.len() {
            assert!((b.lower[i] - b.estimate[i]).abs() < 1e-12 && (b.upper[i] - b.estimate[i]).abs() < 1e-12);
        }
    }
    assert!(!si.warnings.is_empty(), "zero-SD gridpoints are reported");
}

#[test]
fn level_monotonicity_seed_determinism_and_containment() {
    let model = drift_model(spline_drift_data(2, 300, SIGMA));
    let res = drift_fit(&model, SIGMA);
    let grid = linspace(0.0, 1.0, 40);
    let term = model.design.term_id("mu:s(x)").unwrap();
    for target in [BandTarget::Parameter(0), BandTarget::Terms(vec![term])] {
        let spec = |level, seed| BandSpec::new(target.clone(), "x", grid.clone(), level, seed);
        let (p80, s80) = bands(&model, &res, &spec(0.80, 9)).unwrap();
        let (p95, s95) = bands(&model, &res, &spec(0.95, 9)).unwrap();
        assert!(p95.contains_band(&p80));
        assert!(s95.contains_band(&s80));
        assert!(s95.contains_band(&p95) && s80.contains_band(&p80));
        let (again_p, again_s) = bands(&model, &res, &spec(0.95, 9)).unwrap();
        assert_eq!(again_p, p95);
        assert_eq!(again_s, s95);
        let (other, _) = bands(&model, &res, &spec(0.95, 10)).unwrap();
        assert_ne!(other.lower, p95.lower);
        assert!(s95.critical_value.unwrap() > 1.96);
    }
}

#[test]
fn constant_term_simultaneous_matches_pointwise() {
    let model = drift_model(spline_drift_data(3, 300, SIGMA));
    let res = drift_fit(&model, SIGMA);
    let id = model.design.term_id("mu:(Intercept)").unwrap();
    let spec = BandSpec::new(BandTarget::Terms(vec![id]), "x", linspace(0.0, 1.0, 25), 0.95, 4).with_draws(20_000);
    let (pw, si) = bands(&model, &res, &spec).unwrap();
    let se = res.std_error(model.design.intercept_col(0).unwrap());
    for i in 0..25 {
        let wp = pw.upper[i] - pw.lower[i];
        let ws = si.upper[i] - si.lower[i];
        assert!((ws / wp - 1.0).abs() < 0.02, "{ws} vs {wp}");
        assert!((wp / (2.0 * 1.959964 * se) - 1.0).abs() < 0.03);
    }
    assert!((si.critical_value.unwrap() - 1.959964).abs() < 0.05);
}

#[test]
fn two_draws_give_min_max_band_with_warning() {
    let model = drift_model(spline_drift_data(4, 200, SIGMA));
    let res = drift_fit(&model, SIGMA);
    let spec = mu_spec(linspace(0.0, 1.0, 10), 0.95, 5).with_draws(2);
    let pw = pointwise_band(&model, &res, &spec).unwrap();
    assert!(pw.warnings.iter().any(|w| w.contains("draws")), "{:?}", pw.warnings);
    let draws = vcsde::uncertainty::posterior_draws(&res, 2, 5).unwrap();
    let x = model.design.predict_matrix(0, &vcsde::basis::Scenario::new("x", pw.grid.clone())).unwrap();
    let f = &x * draws.transpose();
    for i in 0..10 {
        let (a, b) = (f[(i, 0)], f[(i, 1)]);
        let (lo, hi) = (a.min(b).min(pw.estimate[i]), a.max(b).max(pw.estimate[i]));
        assert!((pw.lower[i] - lo).abs() < 1e-10 && (pw.upper[i] - hi).abs() < 1e-10);
    }
}

#[test]
fn pointwise_coverage_across_the_function_is_nominal() {
    let grid = linspace(0.02, 0.98, 25);
    let truth: Vec<f64> = grid.iter().map(|&x| drift_truth(x)).collect();
    let reps = 500;
    let mut total = 0.0;
    for r in 0..reps {
        let model = drift_model(spline_drift_data(10_000 + r, 300, SIGMA));
        let res = drift_fit(&model, SIGMA);
        let pw = pointwise_band(&model, &res, &mu_spec(grid.clone(), 0.95, r).with_draws(400)).unwrap();
        total += pw.pointwise_coverage(&truth);
    }
    let cov = total / reps as f64;
    assert!((cov - 0.95).abs() <= 0.03, "average pointwise coverage {cov}");
}

#[test]
fn bands_narrow_with_more_data() {
    let grid = linspace(0.05, 0.95, 20);
    for r in 0..5 {
        let small = drift_model(spline_drift_data(500 + r, 500, SIGMA));
        let large = drift_model(spline_drift_data(900 + r, 4000, SIGMA));
        let bs = pointwise_band(&small, &drift_fit(&small, SIGMA), &mu_spec(grid.clone(), 0.95, r)).unwrap();
        let bl = pointwise_band(&large, &drift_fit(&large, SIGMA), &mu_spec(grid.clone(), 0.95, r)).unwrap();
        for i in 0..grid.len() {
            assert!(bl.upper[i] - bl.lower[i] < bs.upper[i] - bs.lower[i], "replicate {r}, gridpoint {i}");
        }
    }
}
