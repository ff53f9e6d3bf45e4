//! Delimited-text ingestion into `SeriesData`.

use crate::config::{DataConfig, ObsErrorConfig, TimeFormat};
use crate::error::{CliError, CliResult};
use chrono::{DateTime, NaiveDateTime};
use std::collections::BTreeMap;
use vcsde::data::{Column, Cov2, SeriesData};
use vcsde::ssm::{circular_cov, ellipse_to_cov, goniometer_cov, ErrorEllipse};

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub observations: usize,
    pub series: usize,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub data: SeriesData,
    pub summary: Vec<GroupSummary>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Seconds since the Unix epoch (ISO-8601) or the raw number (seconds).
pub fn parse_time(s: &str, fmt: TimeFormat) -> CliResult<f64> {
    let s = s.trim();
    match fmt {
        TimeFormat::Seconds => s.parse::<f64>().map_err(|_| bad(format!("invalid time `{s}`"))),
        TimeFormat::Iso8601 => {
            if let Ok(t) = DateTime::parse_from_rfc3339(s) {
                return Ok(t.timestamp() as f64 + t.timestamp_subsec_nanos() as f64 * 1e-9);
            }
            for f in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
                if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
                    let u = t.and_utc();
                    return Ok(u.timestamp() as f64 + u.timestamp_subsec_nanos() as f64 * 1e-9);
                }
            }
            Err(bad(format!("invalid ISO-8601 timestamp `{s}`")))
        }
    }
}

fn parse_num(s: &str, col: &str, row: usize) -> CliResult<f64> {
    s.trim().parse::<f64>().map_err(|_| bad(format!("column `{col}`, row {}: `{s}` is not a number", row + 1)))
}

fn parse_coord(s: &str, col: &str, row: usize) -> CliResult<f64> {
    match s.trim() {
        "" | "NA" | "NaN" | "nan" => Ok(f64::NAN),
        v => parse_num(v, col, row),
    }
}

pub fn ingest(cfg: &DataConfig) -> CliResult<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(&cfg.path)
        .map_err(|e| bad(format!("cannot read data {}: {e}", cfg.path.display())))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| bad(format!("missing column `{name}`")));
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for r in rdr.records() {
        rows.push(r.map_err(|e| bad(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(bad("data file has no rows"));
    }
    if cfg.coords.is_empty() || cfg.coords.len() > 2 {
        return Err(bad("`coords` must name one or two columns"));
    }
    if !(cfg.time_unit > 0.0) {
        return Err(bad("`time_unit` must be positive"));
    }

    let tcol = col(&cfg.time)?;
    let scols: Vec<usize> = cfg.series.iter().map(|s| col(s)).collect::<CliResult<_>>()?;
    let key = |r: &csv::StringRecord| -> String {
        if scols.is_empty() {
            "1".to_string()
        } else {
            scols.iter().map(|&c| &r[c]).collect::<Vec<_>>().join("/")
        }
    };

    // group rows by series in order of first appearance, then by time
    let mut order: Vec<String> = Vec::new();
    let mut members: BTreeMap<String, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let k = key(r);
        let t = parse_time(&r[tcol], cfg.time_format)?;
        members
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push((t, i));
    }
    let mut perm: Vec<usize> = Vec::with_capacity(rows.len());
    let mut labels: Vec<String> = Vec::with_capacity(rows.len());
    let mut time: Vec<f64> = Vec::with_capacity(rows.len());
    let mut abs_start: BTreeMap<String, f64> = BTreeMap::new();
    for k in &order {
        let m = members.get_mut(k).unwrap();
        m.sort_by(|a, b| a.0.total_cmp(&b.0));
        let t0 = m[0].0;
        abs_start.insert(k.clone(), t0);
        for &(t, i) in m.iter() {
            perm.push(i);
            labels.push(k.clone());
            time.push((t - t0) / cfg.time_unit);
        }
    }
    let n = perm.len();
    let field = |c: usize, j: usize| -> &str { &rows[perm[j]][c] };

    let mut coords = Vec::new();
    for name in &cfg.coords {
        let c = col(name)?;
        coords.push((0..n).map(|j| parse_coord(field(c, j), name, perm[j])).collect::<CliResult<Vec<f64>>>()?);
    }
    let mut data = SeriesData::new(&labels, time, coords);
    for name in &cfg.numeric {
        let c = col(name)?;
        let v = (0..n).map(|j| parse_num(field(c, j), name, perm[j])).collect::<CliResult<Vec<f64>>>()?;
        data = data.with_column(name, Column::Numeric(v));
    }
    for name in &cfg.factors {
        let c = col(name)?;
        let v: Vec<&str> = (0..n).map(|j| field(c, j)).collect();
        data = data.with_column(name, Column::factor_from_labels(&v));
    }
    if let Some(err) = &cfg.error {
        let num = |name: &str| -> CliResult<Vec<f64>> {
            let c = col(name)?;
            (0..n).map(|j| parse_num(field(c, j), name, perm[j])).collect()
        };
        let cov: Vec<Cov2> = match err {
            ObsErrorConfig::Ellipse { semi_major, semi_minor, orientation } => {
                let (a, b, o) = (num(semi_major)?, num(semi_minor)?, num(orientation)?);
                (0..n)
                    .map(|j| {
                        ellipse_to_cov(&ErrorEllipse { semi_major: a[j], semi_minor: b[j], orientation: o[j] })
                            .map_err(CliError::from)
                    })
                    .collect::<CliResult<_>>()?
            }
            ObsErrorConfig::Goniometer { db } => num(db)?.into_iter().map(goniometer_cov).collect(),
            ObsErrorConfig::Radius { radius } => num(radius)?.into_iter().map(circular_cov).collect(),
            ObsErrorConfig::Covariance { xx, xy, yy } => {
                let (a, b, c) = (num(xx)?, num(xy)?, num(yy)?);
                (0..n).map(|j| Cov2::new(a[j], b[j], c[j])).collect()
            }
        };
        data = data.with_obs_cov(cov);
    }
    if let Some(ex) = &cfg.exposure {
        for k in ex.start.keys() {
            if !abs_start.contains_key(k) {
                return Err(bad(format!("exposure start given for unknown series `{k}`")));
            }
        }
        let mut start: BTreeMap<&str, f64> = BTreeMap::new();
        for (k, v) in &ex.start {
            start.insert(k, (parse_time(v, cfg.time_format)? - abs_start[k]) / cfg.time_unit);
        }
        let mut ind = vec![0.0; n];
        let mut since = vec![0.0; n];
        for j in 0..n {
            if let Some(&te) = start.get(labels[j].as_str()) {
                if data.time[j] >= te {
                    ind[j] = 1.0;
                    since[j] = data.time[j] - te;
                }
            }
        }
        data = data.with_column(&ex.indicator, Column::Numeric(ind));
        if let Some(s) = &ex.since {
            data = data.with_column(s, Column::Numeric(since));
        }
    }
    if let Some(p) = &cfg.progress {
        let mut v = vec![0.0; n];
        for r in data.series_ranges() {
            let (a, b) = (data.time[r.start], data.time[r.end - 1]);
            for j in r {
                v[j] = if b > a { (data.time[j] - a) / (b - a) } else { 0.0 };
            }
        }
        data = data.with_column(p, Column::Numeric(v));
    }
    data.validate()?;

    let gcol = cfg.group.as_deref().map(col).transpose()?;
    let mut gorder: Vec<String> = Vec::new();
    let mut gsum: BTreeMap<String, GroupSummary> = BTreeMap::new();
    for r in data.series_ranges() {
        let g = match gcol {
            Some(c) => field(c, r.start).to_string(),
            None => data.series_names[data.series[r.start]].clone(),
        };
        let e = gsum.entry(g.clone()).or_insert_with(|| {
            gorder.push(g.clone());
            GroupSummary { group: g, observations: 0, series: 0 }
        });
        e.observations += r.len();
        e.series += 1;
    }
    let summary = gorder.into_iter().map(|g| gsum.remove(&g).unwrap()).collect();
    Ok(Ingested { data, summary })
}
