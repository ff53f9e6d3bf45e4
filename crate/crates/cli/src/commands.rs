//! Subcommand implementations. Each returns a short human-readable summary.

use crate::artifact::{coefficient_labels, FitArtifact};
use crate::config::{BandConfig, ModelConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, Ingested};
use crate::output::{num, Table};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::PathBuf;
use vcsde::basis::TermBasis;
use vcsde::estimate::{fit, FitResult, Model};
use vcsde::ppc::{histogram, ppc_run, DiveStat, PpcConfig};
use vcsde::sde::{simulate, simulate_from_coefficients};
use vcsde::simstudy::{run_study, Ensemble, StudyConfig};
use vcsde::ssm::kalman_smooth;
use vcsde::uncertainty::{bands, linspace, quantile, Band, BandSpec, BandTarget};

struct Ctx<'a> {
    cfg: &'a RunConfig,
    hash: String,
    out: PathBuf,
    command: &'static str,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a RunConfig, command: &'static str) -> CliResult<Self> {
        let out = cfg.out_dir();
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Self { cfg, hash: cfg.hash(), out, command })
    }

    fn write(&self, name: &str, t: &Table) -> CliResult<PathBuf> {
        let p = self.out.join(name);
        t.write(&p, self.command, &self.hash, &self.cfg.units)?;
        Ok(p)
    }
}

pub fn build_model(mc: &ModelConfig) -> CliResult<(Ingested, Model)> {
    let ing = ingest(&mc.data)?;
    let model = Model::new(mc.family, mc.formulas.clone(), ing.data.clone(), mc.observation)?;
    Ok((ing, model))
}

fn summary_table(ing: &Ingested) -> Table {
    let mut t = Table::new(&["group", "observations", "series"]);
    for g in &ing.summary {
        t.push(vec![g.group.clone(), g.observations.to_string(), g.series.to_string()]);
    }
    t
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<String> {
    let ctx = Ctx::new(cfg, "fit")?;
    let mc = cfg.model()?;
    let (ing, model) = build_model(mc)?;
    let fixed = mc.init.fixed.iter().map(|l| model.fixed_index(l)).collect::<vcsde::error::Result<Vec<_>>>()?;
    let res = fit(&model, &mc.fit_config(fixed))?;
    let art = FitArtifact::new(mc, &model, &res);
    let path = ctx.out.join("fit.json");
    art.save(&path)?;

    let (fl, rl, bl) = coefficient_labels(&model.design);
    let p = fl.len();
    let gamma = res.gamma();
    let mut est = Table::new(&["kind", "label", "estimate", "std_error"]);
    for (i, l) in fl.iter().chain(&rl).enumerate() {
        let kind = if i < p { "fixed" } else { "random" };
        est.push(vec![kind.into(), l.clone(), num(gamma[i]), num(res.std_error(i))]);
    }
    ctx.write("estimates.csv", &est)?;
    let mut sm = Table::new(&["block", "term", "lambda", "log_lambda"]);
    for (b, l) in bl.iter().enumerate() {
        sm.push(vec![b.to_string(), l.clone(), num(res.lambda[b]), num(res.lambda[b].ln())]);
    }
    ctx.write("smoothing.csv", &sm)?;
    ctx.write("data_summary.csv", &summary_table(&ing))?;

    let mut s = String::new();
    for g in &ing.summary {
        let _ = writeln!(s, "{}: {} observations, {} series", g.group, g.observations, g.series);
    }
    let c = &res.convergence;
    let _ = writeln!(
        s,
        "fit {:?} after {} outer iterations: marginal nll {}, gradient {:.3e}; artifact {}",
        c.status,
        c.outer_iterations,
        num(res.marginal_nll),
        c.grad_norm,
        path.display()
    );
    for w in &c.warnings {
        log::warn!("{w}");
    }
    if !res.converged() {
        return Err(CliError::NonConvergence(format!("{:?} (artifact written to {})", c.status, path.display())));
    }
    Ok(s)
}

/// Loads the fit artifact and rebuilds its model from the data.
pub fn load_fitted(cfg: &RunConfig) -> CliResult<(FitArtifact, Model, FitResult)> {
    let art = FitArtifact::load(&cfg.artifact_path())?;
    let mc = match &cfg.model {
        Some(m) => {
            art.check_model(m)?;
            m.clone()
        }
        None => art.model.clone(),
    };
    let (_, model) = build_model(&mc)?;
    if model.data.len() != art.n_obs || model.design.n_coef() != art.alpha.len() + art.beta.len() {
        return Err(CliError::Input("fit artifact does not match the rebuilt model".into()));
    }
    let res = art.fit_result();
    Ok((art, model, res))
}

fn default_range(model: &Model, bc: &BandConfig, ids: &[usize]) -> CliResult<(f64, f64)> {
    if let Some(r) = bc.range {
        return Ok(r);
    }
    for &i in ids {
        if let TermBasis::Spline { covariate, lo, hi, .. } = &model.design.terms[i].basis {
            if covariate == &bc.covariate {
                return Ok((*lo, *hi));
            }
        }
    }
    let x = model.data.numeric(&bc.covariate)?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

fn band_spec(model: &Model, bc: &BandConfig, seed: u64) -> CliResult<BandSpec> {
    let d = &model.design;
    let (target, ids) = match &bc.parameter {
        Some(p) if bc.terms.is_empty() => {
            let k = d.param_index(p)?;
            let ids: Vec<usize> = d.terms.iter().enumerate().filter(|(_, t)| t.param == k).map(|(i, _)| i).collect();
            (BandTarget::Parameter(k), ids)
        }
        None if !bc.terms.is_empty() => {
            let ids = bc.terms.iter().map(|l| d.term_id(l)).collect::<vcsde::error::Result<Vec<_>>>()?;
            (BandTarget::Terms(ids.clone()), ids)
        }
        _ => return Err(CliError::Input(format!("band `{}` needs exactly one of `terms` or `parameter`", bc.name))),
    };
    let (lo, hi) = default_range(model, bc, &ids)?;
    if bc.grid_size < 2 || !(hi > lo) {
        return Err(CliError::Input(format!("band `{}` has an empty grid", bc.name)));
    }
    let mut spec = BandSpec::new(target, &bc.covariate, linspace(lo, hi, bc.grid_size), bc.level, seed).with_draws(bc.draws);
    spec.values = bc.values.clone();
    spec.levels = bc.levels.clone();
    Ok(spec)
}

fn band_table(pw: &Band, si: &Band) -> Table {
    let mut t = Table::new(&["grid", "estimate", "pointwise_lower", "pointwise_upper", "simultaneous_lower", "simultaneous_upper", "zero_excluded"]);
    let ex = si.zero_excluded();
    for i in 0..si.grid.len() {
        t.push(vec![
            num(si.grid[i]),
            num(si.estimate[i]),
            num(pw.lower[i]),
            num(pw.upper[i]),
            num(si.lower[i]),
            num(si.upper[i]),
            (ex.contains(&i) as u8).to_string(),
        ]);
    }
    t
}

pub fn cmd_band(cfg: &RunConfig) -> CliResult<String> {
    let ctx = Ctx::new(cfg, "band")?;
    let seed = cfg.seed()?;
    if cfg.bands.is_empty() {
        return Err(CliError::Input("config has no `bands`".into()));
    }
    let (_, model, res) = load_fitted(cfg)?;
    let mut summary = Table::new(&["band", "target", "level", "draws", "critical_value", "zero_excluded", "excluding_gridpoints"]);
    let mut s = String::new();
    for (b, bc) in cfg.bands.iter().enumerate() {
        let spec = band_spec(&model, bc, seed.wrapping_add(b as u64))?;
        let (pw, si) = bands(&model, &res, &spec)?;
        for w in si.warnings.iter().chain(&pw.warnings) {
            log::warn!("band {}: {w}", bc.name);
        }
        ctx.write(&format!("band_{}.csv", bc.name), &band_table(&pw, &si))?;
        let ex = si.zero_excluded();
        let pts: Vec<String> = ex.iter().map(|&i| num(si.grid[i])).collect();
        summary.push(vec![
            bc.name.clone(),
            si.target.clone(),
            num(bc.level),
            bc.draws.to_string(),
            si.critical_value.map(num).unwrap_or_default(),
            (!ex.is_empty()).to_string(),
            pts.join(";"),
        ]);
        let _ = writeln!(
            s,
            "band {}: zero {} by the simultaneous band at {} of {} gridpoints",
            bc.name,
            if ex.is_empty() { "not excluded" } else { "excluded" },
            ex.len(),
            si.grid.len()
        );
    }
    ctx.write("bands_summary.csv", &summary)?;
    Ok(s)
}

pub fn cmd_ppc(cfg: &RunConfig) -> CliResult<String> {
    let ctx = Ctx::new(cfg, "ppc")?;
    let seed = cfg.seed()?;
    let sec = cfg.ppc.as_ref().ok_or_else(|| CliError::Input("config has no `ppc` section".into()))?;
    let (_, model, res) = load_fitted(cfg)?;
    let names = &model.data.series_names;
    let template: Vec<usize> = if sec.template.is_empty() {
        (0..names.len()).collect()
    } else {
        sec.template
            .iter()
            .map(|t| names.iter().position(|n| n == t).ok_or_else(|| CliError::Input(format!("unknown template series `{t}`"))))
            .collect::<CliResult<_>>()?
    };
    let stats: Vec<DiveStat> = if sec.stats.is_empty() {
        DiveStat::ALL.to_vec()
    } else {
        sec.stats.iter().map(|s| DiveStat::from_name(s)).collect::<vcsde::error::Result<_>>()?
    };
    let pc = PpcConfig { template, stats, draws: sec.draws, seed, sidedness: sec.sidedness };
    let rep = ppc_run(&model, &res, &pc)?;
    for w in &rep.warnings {
        log::warn!("ppc: {w}");
    }
    let mut sum = Table::new(&["stat", "observed", "p_value", "sim_mean", "sim_q025", "sim_median", "sim_q975"]);
    let mut hist = Table::new(&["stat", "bin_lower", "bin_upper", "count"]);
    let mut header = vec!["draw".to_string()];
    header.extend(rep.stats.iter().map(|s| s.name.clone()));
    let mut sims = Table::with_header(header);
    let mut s = String::new();
    for st in &rep.stats {
        let mean = st.simulated.iter().sum::<f64>() / st.simulated.len() as f64;
        sum.push(vec![
            st.name.clone(),
            num(st.observed),
            num(st.p_value),
            num(mean),
            num(quantile(&st.simulated, 0.025)),
            num(quantile(&st.simulated, 0.5)),
            num(quantile(&st.simulated, 0.975)),
        ]);
        let (edges, counts) = histogram(&st.simulated, sec.bins);
        for (b, c) in counts.iter().enumerate() {
            hist.push(vec![st.name.clone(), num(edges[b]), num(edges[b + 1]), c.to_string()]);
        }
        let _ = writeln!(s, "{}: observed {:.4}, p = {:.3}", st.name, st.observed, st.p_value);
    }
    for k in 0..rep.draws {
        let mut row = vec![k.to_string()];
        row.extend(rep.stats.iter().map(|st| num(st.simulated[k])));
        sims.push(row);
    }
    ctx.write("ppc_summary.csv", &sum)?;
    ctx.write("ppc_histograms.csv", &hist)?;
    ctx.write("ppc_simulated.csv", &sims)?;
    Ok(s)
}

fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<String> {
    let ctx = Ctx::new(cfg, "simulate")?;
    let seed = cfg.seed()?;
    let sc = cfg.simulate.clone().unwrap_or(crate::config::SimulateConfig {
        replicates: 1,
        params: None,
        family: None,
        times: None,
        z0: None,
    });
    let mut rows: Vec<(usize, String, f64, Vec<f64>)> = Vec::new();
    let dim;
    if let Some(params) = &sc.params {
        let family = sc.family.or(cfg.model.as_ref().map(|m| m.family)).ok_or_else(|| {
            CliError::Input("simulate with `params` needs `family` (here or in `model`)".into())
        })?;
        let g = sc.times.as_ref().ok_or_else(|| CliError::Input("simulate with `params` needs `times`".into()))?;
        if g.n < 1 || !(g.end >= g.start) {
            return Err(CliError::Input("invalid simulation time grid".into()));
        }
        let theta: Vec<f64> = family
            .param_names()
            .iter()
            .map(|p| params.get(*p).copied().ok_or_else(|| CliError::Input(format!("missing parameter `{p}`"))))
            .collect::<CliResult<_>>()?;
        dim = family.dim();
        let z0 = sc.z0.clone().unwrap_or_else(|| vec![0.0; dim]);
        let times = if g.n == 1 { vec![g.start] } else { linspace(g.start, g.end, g.n) };
        for r in 0..sc.replicates {
            let mut rng = replicate_rng(seed, r);
            let path = simulate(family, &times, &z0, |_, _| theta.clone(), &mut rng)?;
            for (i, t) in times.iter().enumerate() {
                rows.push((r, "1".into(), *t, path.iter().map(|c| c[i]).collect()));
            }
        }
    } else {
        let (_, model, res) = load_fitted(cfg)?;
        dim = model.family.dim();
        let gamma = res.gamma();
        for r in 0..sc.replicates {
            let mut rng = replicate_rng(seed, r);
            let sim = simulate_from_coefficients(model.family, &model.design, &model.data, &gamma, &mut rng)?;
            for i in 0..sim.len() {
                let name = sim.series_names[sim.series[i]].clone();
                rows.push((r, name, sim.time[i], sim.coords.iter().map(|c| c[i]).collect()));
            }
        }
    }
    let mut header = vec!["replicate".to_string(), "series".into(), "time".into()];
    if dim == 1 {
        header.push("z".into());
    } else {
        header.extend(["z_x".to_string(), "z_y".to_string()]);
    }
    let mut t = Table::with_header(header);
    let n = rows.len();
    for (r, s, time, z) in rows {
        let mut row = vec![r.to_string(), s, num(time)];
        row.extend(z.into_iter().map(num));
        t.push(row);
    }
    let p = ctx.write("simulated.csv", &t)?;
    Ok(format!("{} replicates, {n} rows written to {}\n", sc.replicates, p.display()))
}

fn ensemble_tables(e: &Ensemble) -> (Table, Table) {
    let mut s = Table::new(&["x", "truth", "mean", "q025", "q10", "q90", "q975"]);
    for i in 0..e.grid.len() {
        s.push(vec![num(e.grid[i]), num(e.truth[i]), num(e.mean[i]), num(e.q025[i]), num(e.q10[i]), num(e.q90[i]), num(e.q975[i])]);
    }
    let mut c = Table::new(&["curve", "x", "value"]);
    for (k, curve) in e.curves.iter().enumerate() {
        for (i, v) in curve.iter().enumerate() {
            c.push(vec![k.to_string(), num(e.grid[i]), num(*v)]);
        }
    }
    (s, c)
}

pub fn cmd_sim_study(cfg: &RunConfig) -> CliResult<String> {
    let ctx = Ctx::new(cfg, "sim-study")?;
    let mut sc: StudyConfig = cfg.sim_study.clone().unwrap_or_default();
    sc.seed = cfg.seed()?;
    let rep = run_study(&sc)?;
    for f in &rep.failures {
        log::warn!("replicate {} failed: {}", f.replicate, f.message);
    }
    let mut sum = Table::new(&["replicates", "succeeded", "failed", "coverage", "median_rmse_baseline", "level"]);
    sum.push(vec![
        sc.replicates.to_string(),
        rep.records.len().to_string(),
        rep.failures.len().to_string(),
        num(rep.coverage),
        num(rep.median_rmse_baseline),
        num(sc.level),
    ]);
    ctx.write("simstudy_summary.csv", &sum)?;
    let mut recs = Table::new(&["replicate", "converged", "covered", "rmse_baseline", "rmse_difference"]);
    for r in &rep.records {
        recs.push(vec![r.replicate.to_string(), r.converged.to_string(), r.covered.to_string(), num(r.rmse_baseline), num(r.rmse_difference)]);
    }
    ctx.write("simstudy_replicates.csv", &recs)?;
    for (name, e) in [("baseline", &rep.baseline), ("difference", &rep.difference)] {
        let (s, c) = ensemble_tables(e);
        ctx.write(&format!("simstudy_{name}.csv"), &s)?;
        ctx.write(&format!("simstudy_{name}_curves.csv"), &c)?;
    }
    Ok(format!(
        "{} replicates ({} failed): simultaneous coverage {}, median baseline RMSE {}\n",
        sc.replicates,
        rep.failures.len(),
        num(rep.coverage),
        num(rep.median_rmse_baseline)
    ))
}

pub fn cmd_smooth_track(cfg: &RunConfig) -> CliResult<String> {
    let ctx = Ctx::new(cfg, "smooth-track")?;
    let (_, model, res) = load_fitted(cfg)?;
    let states = kalman_smooth(&model.design, &model.data, &res.gamma())?;
    let mut t = Table::new(&["series", "time", "x", "y", "var_x", "cov_xy", "var_y"]);
    let d = &model.data;
    for (i, s) in states.iter().enumerate() {
        t.push(vec![
            d.series_names[d.series[i]].clone(),
            num(d.time[i]),
            num(s.mean[0]),
            num(s.mean[1]),
            num(s.cov.xx),
            num(s.cov.xy),
            num(s.cov.yy),
        ]);
    }
    let p = ctx.write("smoothed_track.csv", &t)?;
    Ok(format!("{} smoothed states written to {}\n", states.len(), p.display()))
}
