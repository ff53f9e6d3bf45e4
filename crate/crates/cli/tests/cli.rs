use chrono::{Duration, TimeZone, Utc};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;
use vcsde::estimate::laplace_marginal;
use vcsde::simstudy::{gen_replicate, StudyConfig};
use vcsde::synth::{dive_study, ou_track, TrackConfig};
use vcsde_cli::artifact::FitArtifact;
use vcsde_cli::commands::{self, build_model, load_fitted};
use vcsde_cli::config::RunConfig;
use vcsde_cli::ingest::ingest;
use vcsde_cli::CliError;

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn load(dir: &Path, v: &Value) -> RunConfig {
    RunConfig::load(&write_config(dir, v)).unwrap()
}

fn table(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// DTag-style export of the synthetic dive study: ISO timestamps at 15 s,
/// one row per depth sample.
fn write_dive_csv(dir: &Path, only: Option<&str>) -> (PathBuf, BTreeMap<String, String>) {
    let d = dive_study(3);
    let (_, animal) = d.factor("animal").unwrap();
    let (levels, _) = d.factor("animal").unwrap();
    let expo = d.numeric("exposed").unwrap();
    let t0 = Utc.with_ymd_and_hms(2011, 6, 1, 8, 0, 0).unwrap();
    let mut s = String::from("animal,dive_no,dive,timestamp,depth\n");
    let mut starts = BTreeMap::new();
    for (k, r) in d.series_ranges().into_iter().enumerate() {
        let name = &d.series_names[d.series[r.start]];
        let a = &levels[animal[r.start]];
        if only.is_some_and(|o| o != a) {
            continue;
        }
        let no = name.rsplit('/').next().unwrap();
        let start = t0 + Duration::hours(3 * k as i64);
        for i in r.clone() {
            let ts = (start + Duration::seconds(15 * (i - r.start) as i64)).format("%Y-%m-%dT%H:%M:%SZ").to_string();
            if expo[i] == 1.0 && !starts.contains_key(name) {
                starts.insert(name.clone(), ts.clone());
            }
            s.push_str(&format!("{a},{no},{name},{ts},{}\n", d.coords[0][i]));
        }
    }
    let p = dir.join("dives.csv");
    std::fs::write(&p, s).unwrap();
    (p, starts)
}

fn dive_model(path: &Path, starts: &BTreeMap<String, String>) -> Value {
    json!({
        "family": "bm",
        "formulas": [
            {"parameter": "mu", "terms": [{"kind": "intercept"}, {"kind": "spline", "covariate": "diveprop"}]},
            {"parameter": "sigma", "terms": [
                {"kind": "intercept"},
                {"kind": "random_intercept", "covariate": "dive"},
                {"kind": "spline", "covariate": "diveprop"},
                {"kind": "spline", "covariate": "diveprop", "by": "exposed", "by_factor": "dive"}
            ]}
        ],
        "data": {
            "path": path,
            "time": "timestamp",
            "time_format": "iso8601",
            "time_unit": 15.0,
            "series": ["animal", "dive_no"],
            "coords": ["depth"],
            "factors": ["dive"],
            "group": "animal",
            "progress": "diveprop",
            "exposure": {"start": starts, "indicator": "exposed"}
        },
        "init": {"intercepts": {"sigma": 10.0}}
    })
}

#[test]
fn dtag_ingestion_counts_observations_and_dives() {
    let dir = TempDir::new().unwrap();
    let (p, starts) = write_dive_csv(dir.path(), Some("zc10_272"));
    let cfg = load(dir.path(), &json!({"model": dive_model(&p, &starts)}));
    let ing = ingest(&cfg.model().unwrap().data).unwrap();
    assert_eq!(ing.summary.len(), 1);
    assert_eq!(ing.summary[0].group, "zc10_272");
    assert_eq!(ing.summary[0].observations, 1203);
    assert_eq!(ing.summary[0].series, 4);
    // 15-s steps become unit steps; exposure starts part-way into the last dive only
    let d = &ing.data;
    assert_eq!(d.time[1] - d.time[0], 1.0);
    let expo = d.numeric("exposed").unwrap();
    let ranges = d.series_ranges();
    assert!(ranges[..3].iter().all(|r| expo[r.clone()].iter().all(|v| *v == 0.0)));
    let last = ranges[3].clone();
    assert_eq!(expo[last.start], 0.0);
    assert_eq!(expo[last.end - 1], 1.0);
    let prog = d.numeric("diveprop").unwrap();
    assert_eq!(prog[last.start], 0.0);
    assert_eq!(prog[last.end - 1], 1.0);
}

#[test]
fn ingestion_sorts_rows_and_derives_error_covariances() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("fixes.csv");
    std::fs::write(
        &p,
        "# exported fixes\nid,t,x,y,db,smaj,smin,ori\nb,20,1,1,-60,100,50,0\na,7200,2,2,-75,300,100,90\na,0,0,0,-45,200,200,45\n",
    )
    .unwrap();
    let mut data = json!({"path": p, "time": "t", "time_unit": 3600.0, "series": ["id"], "coords": ["x", "y"],
        "error": {"kind": "goniometer", "db": "db"}});
    let cfg: vcsde_cli::config::DataConfig = serde_json::from_value(data.clone()).unwrap();
    let ing = ingest(&cfg).unwrap();
    let d = &ing.data;
    assert_eq!(d.series_names, vec!["b", "a"]);
    assert_eq!(d.time, vec![0.0, 0.0, 2.0]);
    assert_eq!(d.coords[0], vec![1.0, 0.0, 2.0]);
    let cov = d.obs_cov.as_ref().unwrap();
    assert_eq!(cov[0].xx, 500.0 * 500.0 / 2.0);
    assert_eq!(cov[1].xx, 100.0 * 100.0 / 2.0);
    assert_eq!(cov[2].yy, 1000.0 * 1000.0 / 2.0);

    data["error"] = json!({"kind": "ellipse", "semi_major": "smaj", "semi_minor": "smin", "orientation": "ori"});
    let cfg: vcsde_cli::config::DataConfig = serde_json::from_value(data.clone()).unwrap();
    let cov = ingest(&cfg).unwrap().data.obs_cov.unwrap();
    // orientation 0: major axis along northing
    assert!((cov[0].yy - 5000.0).abs() < 1e-9 && (cov[0].xx - 1250.0).abs() < 1e-9);
    // orientation 90: major axis along easting
    assert!((cov[2].xx - 45000.0).abs() < 1e-6 && (cov[2].yy - 5000.0).abs() < 1e-6);

    data["coords"] = json!(["x", "missing"]);
    let cfg: vcsde_cli::config::DataConfig = serde_json::from_value(data).unwrap();
    assert!(matches!(ingest(&cfg), Err(CliError::Input(m)) if m.contains("missing")));
}

#[test]
fn iso_and_second_times_agree() {
    use vcsde_cli::config::TimeFormat;
    use vcsde_cli::ingest::parse_time;
    let a = parse_time("2011-06-01T08:00:15Z", TimeFormat::Iso8601).unwrap();
    let b = parse_time("2011-06-01 08:00:00", TimeFormat::Iso8601).unwrap();
    let c = parse_time("2011-06-01T10:00:00.5+02:00", TimeFormat::Iso8601).unwrap();
    assert_eq!(a - b, 15.0);
    assert!((c - b - 0.5).abs() < 1e-6);
    assert_eq!(parse_time(" 12.5 ", TimeFormat::Seconds).unwrap(), 12.5);
    assert!(parse_time("yesterday", TimeFormat::Iso8601).is_err());
}

/// Simulation-study replicate exported as CSV with its model section.
fn study_model(dir: &Path) -> Value {
    let sc = StudyConfig::default();
    let d = gen_replicate(&sc, 0).unwrap();
    let x = d.numeric("x").unwrap();
    let e = d.numeric("expo").unwrap();
    let mut s = String::from("series,t,z,x,expo\n");
    for i in 0..d.len() {
        s.push_str(&format!("{},{},{},{},{}\n", d.series_names[d.series[i]], d.time[i], d.coords[0][i], x[i], e[i]));
    }
    let p = dir.join("study.csv");
    std::fs::write(&p, s).unwrap();
    json!({
        "family": "bm",
        "formulas": vcsde::simstudy::study_formulas(&sc),
        "data": {"path": p, "time": "t", "series": ["series"], "coords": ["z"], "numeric": ["x", "expo"]},
        "init": {"intercepts": {"sigma": 0.3}}
    })
}

#[test]
fn fit_round_trip_and_determinism() {
    let dir = TempDir::new().unwrap();
    let model = study_model(dir.path());
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let cfg1 = load(dir.path(), &json!({"model": model, "out": out1, "units": {"time": "s"}}));
    commands::cmd_fit(&cfg1).unwrap();
    let cfg2 = load(dir.path(), &json!({"model": model, "out": out2, "units": {"time": "s"}}));
    commands::cmd_fit(&cfg2).unwrap();

    let (art, m, res) = load_fitted(&cfg1).unwrap();
    assert_eq!(art.version, vcsde_cli::artifact::VERSION);
    let again = laplace_marginal(&m, &res.alpha, &res.lambda).unwrap();
    assert!((again - art.marginal_nll).abs() < 1e-10, "{again} vs {}", art.marginal_nll);
    assert_eq!(res.covariance.nrows(), m.design.n_coef());

    let a = std::fs::read(out1.join("estimates.csv")).unwrap();
    let b = std::fs::read(out2.join("estimates.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# vcsde fit"));
    assert!(text.contains(&format!("# config_hash: {}", cfg1.hash())));
    assert!(text.contains("# units: time=s"));
    assert!(text.contains("fixed,sigma:expo,"));

    // bands on the difference smooth: the truth dips well away from zero
    let bands = json!([{
        "name": "difference",
        "terms": ["sigma:expo", "sigma:s(x):by=expo"],
        "covariate": "x",
        "draws": 500
    }]);
    let cfg = load(dir.path(), &json!({"model": model, "out": out1, "bands": bands, "seed": 11}));
    let msg = commands::cmd_band(&cfg).unwrap();
    assert!(msg.contains("excluded by the simultaneous band"), "{msg}");
    let sum = table(&out1.join("bands_summary.csv"));
    assert_eq!(sum[0][5], "zero_excluded");
    assert_eq!(sum[1][5], "true");
    let pts: Vec<f64> = sum[1][6].split(';').map(|v| v.parse().unwrap()).collect();
    assert!(!pts.is_empty());
    let band = table(&out1.join("band_difference.csv"));
    assert_eq!(band.len(), 101);
    let flagged = band[1..].iter().filter(|r| r[6] == "1").count();
    assert_eq!(flagged, pts.len());
    for r in &band[1..] {
        let v: Vec<f64> = r[..6].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[4] <= v[2] && v[3] <= v[5], "simultaneous must contain pointwise: {r:?}");
    }
    let first = std::fs::read(out1.join("band_difference.csv")).unwrap();
    commands::cmd_band(&cfg).unwrap();
    assert_eq!(first, std::fs::read(out1.join("band_difference.csv")).unwrap());

    // artifact from a different model section is refused
    let mut other = model.clone();
    other["init"]["intercepts"]["sigma"] = json!(0.5);
    let cfg = load(dir.path(), &json!({"model": other, "out": out1, "bands": bands, "seed": 11}));
    assert!(matches!(commands::cmd_band(&cfg), Err(CliError::Input(_))));
}

#[test]
fn zero_diffusion_simulation_is_a_straight_line() {
    let dir = TempDir::new().unwrap();
    let cfg = load(
        dir.path(),
        &json!({"seed": 1, "out": dir.path(),
            "simulate": {"family": "bm", "params": {"mu": 0.5, "sigma": 0.0}, "times": {"start": 0.0, "end": 10.0, "n": 21}, "z0": [2.0]}}),
    );
    commands::cmd_simulate(&cfg).unwrap();
    let t = table(&dir.path().join("simulated.csv"));
    assert_eq!(t[0], vec!["replicate", "series", "time", "z"]);
    assert_eq!(t.len(), 22);
    for r in &t[1..] {
        let (time, z): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((z - (2.0 + 0.5 * time)).abs() < 1e-12);
    }
}

#[test]
fn dive_pipeline_fit_band_ppc() {
    let dir = TempDir::new().unwrap();
    let (p, starts) = write_dive_csv(dir.path(), None);
    let model = dive_model(&p, &starts);
    let out = dir.path().join("out");
    let cfg = load(dir.path(), &json!({"model": model, "out": out}));
    let msg = commands::cmd_fit(&cfg).unwrap();
    assert!(msg.contains("zc10_272: 1203 observations, 4 series"), "{msg}");
    assert!(msg.contains("zc13_211: 246 observations, 1 series"));
    let summary = table(&out.join("data_summary.csv"));
    assert_eq!(summary.len(), 6);

    let (_, m, _) = load_fitted(&cfg).unwrap();
    let baseline: Vec<String> = m
        .data
        .series_names
        .iter()
        .filter(|n| !starts.contains_key(*n))
        .cloned()
        .collect();
    assert_eq!(baseline.len(), 11);
    let run = json!({
        "model": model, "out": out, "seed": 5,
        "bands": [
            {"name": "zc10_272_4", "terms": ["sigma:s(diveprop):by=exposed:dive=zc10_272/4"], "covariate": "diveprop", "range": [0.3, 1.0], "draws": 400},
            {"name": "sigma_dive1", "parameter": "sigma", "covariate": "diveprop", "levels": {"dive": "zc10_272/1"}, "draws": 400}
        ],
        "ppc": {"template": baseline, "draws": 100}
    });
    let cfg = load(dir.path(), &run);
    commands::cmd_band(&cfg).unwrap();
    let sig = table(&out.join("band_sigma_dive1.csv"));
    assert!(sig[1..].iter().all(|r| r[1].parse::<f64>().unwrap() > 0.0));
    commands::cmd_ppc(&cfg).unwrap();
    let ppc = table(&out.join("ppc_summary.csv"));
    assert_eq!(ppc.len(), 7);
    assert_eq!(ppc[6][0], "persistence");
    for r in &ppc[1..] {
        let pv: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&pv));
    }
    assert_eq!(table(&out.join("ppc_simulated.csv")).len(), 101);
    let first = std::fs::read(out.join("ppc_simulated.csv")).unwrap();
    commands::cmd_ppc(&cfg).unwrap();
    assert_eq!(first, std::fs::read(out.join("ppc_simulated.csv")).unwrap());
}

#[test]
fn smooth_track_emits_states_with_covariance() {
    let dir = TempDir::new().unwrap();
    let tc = TrackConfig { n: 120, ..TrackConfig::default() };
    let (d, _) = ou_track(&tc, 4).unwrap();
    let cov = d.obs_cov.as_ref().unwrap();
    let mut s = String::from("t,x,y,r\n");
    for i in 0..d.len() {
        s.push_str(&format!("{},{},{},{}\n", d.time[i], d.coords[0][i], d.coords[1][i], (2.0 * cov[i].xx).sqrt()));
    }
    let p = dir.path().join("track.csv");
    std::fs::write(&p, s).unwrap();
    let formulas: Vec<Value> = ["mu_x", "mu_y", "tau", "kappa"]
        .iter()
        .map(|q| json!({"parameter": q, "terms": [{"kind": "intercept"}]}))
        .collect();
    let model = json!({
        "family": "ou2", "observation": "kalman", "formulas": formulas,
        "data": {"path": p, "time": "t", "coords": ["x", "y"], "error": {"kind": "radius", "radius": "r"}},
        "init": {"intercepts": {"tau": 10.0, "kappa": 1000.0}}
    });
    let cfg = load(dir.path(), &json!({"model": model, "out": dir.path()}));
    commands::cmd_fit(&cfg).unwrap();
    commands::cmd_smooth_track(&cfg).unwrap();
    let t = table(&dir.path().join("smoothed_track.csv"));
    assert_eq!(t[0], vec!["series", "time", "x", "y", "var_x", "cov_xy", "var_y"]);
    assert_eq!(t.len(), 121);
    for r in &t[1..] {
        let vx: f64 = r[4].parse().unwrap();
        let vy: f64 = r[6].parse().unwrap();
        assert!(vx > 0.0 && vy > 0.0);
    }
    // conditioning on the whole track never loses precision relative to one fix
    for (i, r) in t[1..].iter().enumerate() {
        let vx: f64 = r[4].parse().unwrap();
        assert!(vx <= cov[i].xx, "row {i}: {vx} > {}", cov[i].xx);
    }
    let set = load(dir.path(), &json!({"model": model, "out": dir.path()}));
    let (_, m, _) = load_fitted(&set).unwrap();
    assert_eq!(build_model(set.model().unwrap()).unwrap().1.data.len(), m.data.len());
}

#[test]
fn sim_study_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let study = json!({"replicates": 3, "n_per_series": 100, "draws": 200, "ensemble_size": 3});
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    commands::cmd_sim_study(&load(dir.path(), &json!({"sim_study": study, "seed": 9, "out": a}))).unwrap();
    commands::cmd_sim_study(&load(dir.path(), &json!({"sim_study": study, "seed": 9, "out": b}))).unwrap();
    for f in ["simstudy_summary.csv", "simstudy_replicates.csv", "simstudy_difference.csv", "simstudy_baseline_curves.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let s = table(&a.join("simstudy_summary.csv"));
    assert_eq!(s[1][0], "3");
    let cov: f64 = s[1][3].parse().unwrap();
    assert!((0.0..=1.0).contains(&cov));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vcsde"))
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    // no config
    assert_eq!(bin().arg("fit").status().unwrap().code(), Some(2));
    // unreadable data
    let cfg = write_config(
        dir.path(),
        &json!({"model": {"family": "bm", "formulas": [], "data": {"path": "nope.csv", "time": "t", "coords": ["z"]}}}),
    );
    let st = bin().args(["fit", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // stochastic command without a seed
    let st = bin().args(["simulate", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // one outer iteration cannot converge
    let mut model = study_model(dir.path());
    model["optimizer"] = json!({"max_outer": 1});
    let cfg = write_config(dir.path(), &json!({"model": model}));
    let out = dir.path().join("nc");
    let st = bin().args(["fit", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(3));
    assert!(out.join("fit.json").exists());
    // artifact version mismatch
    let mut art: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    art["version"] = json!(99);
    std::fs::write(out.join("fit.json"), art.to_string()).unwrap();
    let cfg = write_config(dir.path(), &json!({"artifact": out.join("fit.json"), "seed": 1, "bands": [{"name": "b", "parameter": "sigma", "covariate": "x"}]}));
    let o = bin().args(["band", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
    assert!(FitArtifact::load(&out.join("fit.json")).is_err());
    // no parameters and no artifact to simulate from
    let st = bin().args(["simulate", "--seed", "3", "--out"]).arg(dir.path().join("sim")).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // success with the seed from the command line
    let cfg = write_config(
        dir.path(),
        &json!({"simulate": {"family": "ou1", "params": {"mu": 0.0, "tau": 2.0, "kappa": 1.0}, "times": {"start": 0.0, "end": 5.0, "n": 6}}}),
    );
    let out = dir.path().join("sim");
    let o = bin().args(["simulate", "--seed", "3", "--threads", "1", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(table(&out.join("simulated.csv")).len(), 7);
}
