//! Plot-ready CSV tables with `#` metadata lines.

use crate::error::CliResult;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Shortest round-trip representation, so repeated runs are byte-identical.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, command: &str, config_hash: &str, units: &BTreeMap<String, String>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vcsde {command} {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# config_hash: {config_hash}");
        if units.is_empty() {
            let _ = writeln!(s, "# units: unspecified");
        } else {
            let u: Vec<String> = units.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(s, "# units: {}", u.join("; "));
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        s + &String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn write(&self, path: &Path, command: &str, config_hash: &str, units: &BTreeMap<String, String>) -> CliResult<()> {
        std::fs::write(path, self.render(command, config_hash, units))?;
        Ok(())
    }
}
