//! State-space handling of noisy 2-D positions: error geometry, Kalman
//! filter likelihood and fixed-interval smoothing for the isotropic OU
//! process.

use crate::basis::DesignSet;
use crate::data::{Cov2, SeriesData};
use crate::error::{invalid, Error, Result};
use crate::jet::Jet;
use crate::sde::{Family, LikEval, Order};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Location error ellipse. `orientation` is the bearing of the semi-major
/// axis in degrees clockwise from north.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEllipse {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub orientation: f64,
}

/// Covariance on (Easting, Northing) whose √2-sigma contour is the ellipse,
/// so each semi-axis contributes variance `axis²/2`.
pub fn ellipse_to_cov(e: &ErrorEllipse) -> Result<Cov2> {
    let (big, small) = (e.semi_major, e.semi_minor);
    if !(small >= 0.0) || !(big >= small) || !big.is_finite() || !e.orientation.is_finite() {
        return invalid(format!("invalid error ellipse: major {big}, minor {small}, orientation {}", e.orientation));
    }
    let th = e.orientation.to_radians();
    let (s, c) = th.sin_cos();
    let (va, vb) = (0.5 * big * big, 0.5 * small * small);
    // major axis direction (sin θ, cos θ), minor (cos θ, −sin θ)
    Ok(Cov2::new(va * s * s + vb * c * c, (va - vb) * s * c, va * c * c + vb * s * s))
}

/// Radius (metres) assigned to a goniometer fix of signal strength `db`.
pub fn goniometer_radius(db: f64) -> f64 {
    if db >= -50.0 {
        100.0
    } else if db >= -70.0 {
        500.0
    } else if db >= -80.0 {
        1000.0
    } else if db >= -90.0 {
        2000.0
    } else {
        10000.0
    }
}

/// Isotropic covariance of a circular error region of the given radius.
pub fn circular_cov(radius: f64) -> Cov2 {
    Cov2::isotropic(0.5 * radius * radius)
}

pub fn goniometer_cov(db: f64) -> Cov2 {
    circular_cov(goniometer_radius(db))
}

#[derive(Clone)]
struct JCov {
    xx: Jet,
    xy: Jet,
    yy: Jet,
}

fn obs_cov_at(data: &SeriesData, i: usize) -> Cov2 {
    data.obs_cov.as_ref().map(|v| v[i]).unwrap_or_default()
}

fn observed(data: &SeriesData, i: usize) -> bool {
    let c = obs_cov_at(data, i);
    data.coords.iter().all(|v| v[i].is_finite()) && c.xx.is_finite() && c.xy.is_finite() && c.yy.is_finite()
}

fn check(design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> Result<()> {
    if data.dim() != 2 || design.n_params() != Family::Ou2.n_params() {
        return invalid("the state-space likelihood needs 2-D data and the isotropic 2-D OU family");
    }
    if design.n_rows() != data.len() || gamma.len() != design.n_coef() {
        return invalid("design, data and coefficient dimensions differ");
    }
    Ok(())
}

/// Per-step filter quantities kept for smoothing.
struct FilterStep {
    mf: Vector2<f64>,
    pf: Matrix2<f64>,
    mp: Vector2<f64>,
    pp: Matrix2<f64>,
    e: f64,
}

fn to_mat(p: &JCov) -> Matrix2<f64> {
    Matrix2::new(p.xx.v, p.xy.v, p.xy.v, p.yy.v)
}

/// Runs the filter over one series. Returns the negative log-likelihood
/// (conditional on the first observation) as a jet.
fn filter_series(
    design: &DesignSet,
    data: &SeriesData,
    gamma: &[f64],
    range: std::ops::Range<usize>,
    nvar: usize,
    mut steps: Option<&mut Vec<FilterStep>>,
) -> Result<Jet> {
    let eta = |k: usize, row: usize| -> Jet {
        let e = design.row_entries(k, row);
        if nvar == 0 {
            Jet::cst(e.iter().map(|&(c, w)| w * gamma[c]).sum())
        } else {
            Jet::linear(0.0, e, gamma, nvar)
        }
    };
    let s0 = range.start;
    if !observed(data, s0) {
        return invalid(format!("first row {s0} of a series must be observed"));
    }
    let series = data.series[s0];
    let kappa0 = eta(3, s0).exp();
    let om0 = obs_cov_at(data, s0);
    let mut mx = Jet::cst(data.coords[0][s0]);
    let mut my = Jet::cst(data.coords[1][s0]);
    let prior = JCov { xx: kappa0.offset(om0.xx), xy: Jet::cst(om0.xy), yy: kappa0.offset(om0.yy) };
    let mut nll = Jet::cst(0.0);
    // condition on the first observation: update without scoring it
    let mut p = update(&prior, &mut mx, &mut my, data, s0, series, None)?;
    if let Some(st) = steps.as_deref_mut() {
        st.push(FilterStep {
            mf: Vector2::new(mx.v, my.v),
            pf: to_mat(&p),
            mp: Vector2::new(mx.v, my.v),
            pp: to_mat(&prior),
            e: 1.0,
        });
    }
    for i in s0..range.end.saturating_sub(1) {
        let dt = data.time[i + 1] - data.time[i];
        if !(dt > 0.0) {
            return invalid(format!("times not strictly increasing at row {}", i + 1));
        }
        let (ax, ay) = (eta(0, i), eta(1, i));
        let u = eta(2, i).scale(-1.0).exp().scale(dt);
        let e = u.scale(-1.0).exp();
        let e2 = u.scale(-2.0).exp();
        let q = eta(3, i).exp() * e2.scale(-1.0).offset(1.0);
        let one_m_e = e.scale(-1.0).offset(1.0);
        let mpx = &ax * &one_m_e + &mx * &e;
        let mpy = &ay * &one_m_e + &my * &e;
        let pp = JCov { xx: &p.xx * &e2 + &q, xy: &p.xy * &e2, yy: &p.yy * &e2 + &q };
        mx = mpx;
        my = mpy;
        let (mpv, ppm) = (Vector2::new(mx.v, my.v), to_mat(&pp));
        p = if observed(data, i + 1) {
            update(&pp, &mut mx, &mut my, data, i + 1, series, Some(&mut nll))?
        } else {
            pp
        };
        if let Some(st) = steps.as_deref_mut() {
            st.push(FilterStep { mf: Vector2::new(mx.v, my.v), pf: to_mat(&p), mp: mpv, pp: ppm, e: e.v });
        }
    }
    Ok(nll)
}

/// Measurement update at row `i`; adds the innovation term to `nll` when given.
fn update(
    pp: &JCov,
    mx: &mut Jet,
    my: &mut Jet,
    data: &SeriesData,
    i: usize,
    series: usize,
    nll: Option<&mut Jet>,
) -> Result<JCov> {
    let om = obs_cov_at(data, i);
    let sxx = pp.xx.offset(om.xx);
    let sxy = pp.xy.offset(om.xy);
    let syy = pp.yy.offset(om.yy);
    let det = &sxx * &syy - sxy.sqr();
    let scale = sxx.v.abs() + syy.v.abs();
    if !(det.v > 1e-14 * scale * scale) || !det.v.is_finite() {
        return Err(Error::SingularInnovation { series, row: i });
    }
    let idet = det.recip();
    let vx = (-&*mx).offset(data.coords[0][i]);
    let vy = (-&*my).offset(data.coords[1][i]);
    if let Some(nll) = nll {
        let maha = (&syy * &vx.sqr() - (&sxy * &vx * &vy).scale(2.0) + &sxx * &vy.sqr()) * &idet;
        let term = det.ln().scale(0.5) + maha.scale(0.5) + (2.0 * PI).ln();
        *nll = &*nll + term;
    }
    // K = P S⁻¹
    let kxx = (&pp.xx * &syy - &pp.xy * &sxy) * &idet;
    let kxy = (&pp.xy * &sxx - &pp.xx * &sxy) * &idet;
    let kyx = (&pp.xy * &syy - &pp.yy * &sxy) * &idet;
    let kyy = (&pp.yy * &sxx - &pp.xy * &sxy) * &idet;
    *mx = &*mx + &kxx * &vx + &kxy * &vy;
    *my = &*my + &kyx * &vx + &kyy * &vy;
    // P⁺ = K Ω, symmetrized
    let pxx = kxx.scale(om.xx) + kxy.scale(om.xy);
    let pxy = kxx.scale(om.xy) + kxy.scale(om.yy);
    let pyx = kyx.scale(om.xx) + kyy.scale(om.xy);
    let pyy = kyx.scale(om.xy) + kyy.scale(om.yy);
    Ok(JCov { xx: pxx, xy: (pxy + pyx).scale(0.5), yy: pyy })
}

/// Kalman-filter negative log-likelihood with derivatives in `γ`.
///
/// The first state has prior `N(z̃₁, Ω₁ + κ₁I)` and is updated with the
/// first observation without scoring it, so the result is conditional on
/// that observation. Rows with a missing coordinate or non-finite error
/// covariance skip the update. Without `obs_cov` the error is taken as zero.
pub fn kalman_nll_derivs(design: &DesignSet, data: &SeriesData, gamma: &[f64], order: Order) -> Result<LikEval> {
    check(design, data, gamma)?;
    let n = design.n_coef();
    let nvar = if order == Order::Value { 0 } else { n };
    let mut out = LikEval::zeros(n, order);
    for r in data.series_ranges() {
        let j = filter_series(design, data, gamma, r, nvar, None)?;
        out.value += j.v;
        if order >= Order::Gradient {
            out.grad += j.gradient(n);
        }
        if order >= Order::Hessian {
            out.hess += j.hessian(n);
        }
    }
    if !out.value.is_finite() {
        return Err(Error::Numerical("non-finite Kalman likelihood".into()));
    }
    Ok(out)
}

/// Prediction-error-decomposition log-likelihood.
pub fn kalman_loglik(design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> Result<f64> {
    Ok(-kalman_nll_derivs(design, data, gamma, Order::Value)?.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedState {
    pub mean: [f64; 2],
    pub cov: Cov2,
    pub filtered_cov: Cov2,
}

fn pinv2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let s = m.symmetric_eigen();
    let tol = 1e-13 * s.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut d = Matrix2::zeros();
    for k in 0..2 {
        if s.eigenvalues[k] > tol {
            d[(k, k)] = 1.0 / s.eigenvalues[k];
        }
    }
    s.eigenvectors * d * s.eigenvectors.transpose()
}

fn cov_of(m: &Matrix2<f64>) -> Cov2 {
    Cov2::new(m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)])
}

/// Rauch–Tung–Striebel fixed-interval smoother; one state per data row.
pub fn kalman_smooth(design: &DesignSet, data: &SeriesData, gamma: &[f64]) -> Result<Vec<SmoothedState>> {
    check(design, data, gamma)?;
    let mut out = Vec::with_capacity(data.len());
    for r in data.series_ranges() {
        let mut steps = Vec::with_capacity(r.len());
        filter_series(design, data, gamma, r, 0, Some(&mut steps))?;
        let n = steps.len();
        let mut ms = vec![Vector2::zeros(); n];
        let mut ps = vec![Matrix2::zeros(); n];
        ms[n - 1] = steps[n - 1].mf;
        ps[n - 1] = steps[n - 1].pf;
        for i in (0..n - 1).rev() {
            let next = &steps[i + 1];
            let g = steps[i].pf * next.e * pinv2(&next.pp);
            ms[i] = steps[i].mf + g * (ms[i + 1] - next.mp);
            let p = steps[i].pf + g * (ps[i + 1] - next.pp) * g.transpose();
            ps[i] = 0.5 * (p + p.transpose());
        }
        for i in 0..n {
            out.push(SmoothedState { mean: [ms[i][0], ms[i][1]], cov: cov_of(&ps[i]), filtered_cov: cov_of(&steps[i].pf) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goniometer_table() {
        assert_eq!(goniometer_radius(-45.0), 100.0);
        assert_eq!(goniometer_radius(-50.0), 100.0);
        assert_eq!(goniometer_radius(-60.0), 500.0);
        assert_eq!(goniometer_radius(-75.0), 1000.0);
        assert_eq!(goniometer_radius(-85.0), 2000.0);
        assert_eq!(goniometer_radius(-90.0), 2000.0);
        assert_eq!(goniometer_radius(-95.0), 10000.0);
        assert_eq!(goniometer_cov(-45.0), Cov2::isotropic(5000.0));
    }

    #[test]
    fn ellipse_examples() {
        let c = ellipse_to_cov(&ErrorEllipse { semi_major: 1000.0, semi_minor: 500.0, orientation: 0.0 }).unwrap();
        assert!((c.xx - 125000.0).abs() < 1e-9 && c.xy.abs() < 1e-9 && (c.yy - 500000.0).abs() < 1e-9);
        let c = ellipse_to_cov(&ErrorEllipse { semi_major: 1000.0, semi_minor: 500.0, orientation: 90.0 }).unwrap();
        assert!((c.xx - 500000.0).abs() < 1e-6 && (c.yy - 125000.0).abs() < 1e-6);
        for th in [0.0, 17.0, 123.0, 300.0] {
            let c = ellipse_to_cov(&ErrorEllipse { semi_major: 40.0, semi_minor: 40.0, orientation: th }).unwrap();
            assert!((c.xx - 800.0).abs() < 1e-9 && c.xy.abs() < 1e-9 && (c.yy - 800.0).abs() < 1e-9);
        }
        assert!(ellipse_to_cov(&ErrorEllipse { semi_major: 1.0, semi_minor: -1.0, orientation: 0.0 }).is_err());
        assert!(ellipse_to_cov(&ErrorEllipse { semi_major: 1.0, semi_minor: 2.0, orientation: 0.0 }).is_err());
    }
}
