//! CSV reports with `#`-prefixed metadata headers and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::RateReport;
use crate::error::Error;

pub const SCHEMA_VERSION: &str = "1.0.0";

pub fn report_schema_version() -> &'static str {
    SCHEMA_VERSION
}

/// Shortest round-trip decimal form; `inf`, `-inf` and `NaN` for the special values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A table with metadata, written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReport {
    pub name: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvReport {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), meta: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.meta(key, fmt_f64(value))
    }

    pub fn row(&mut self, values: Vec<String>) -> &mut Self {
        assert_eq!(values.len(), self.columns.len(), "row width of report {}", self.name);
        self.rows.push(values);
        self
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# schema_version: {SCHEMA_VERSION}\n# report: {}\n", self.name);
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}: {}\n", v.replace('\n', " ")));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields"));
        out
    }

    /// Writes `<dir>/<name>.csv`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.to_csv_string())?;
        Ok(path)
    }
}

/// Metadata, header and records of a parsed report.
pub type ParsedCsv = (BTreeMap<String, String>, Vec<String>, Vec<Vec<String>>);

/// Splits a report written by [`CsvReport::to_csv_string`] into metadata and records.
pub fn parse_csv(text: &str) -> Result<ParsedCsv, Error> {
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once(": ") {
                meta.insert(k.to_string(), v.to_string());
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((meta, header, rows))
}

/// `n, error, used` with the fit in the header.
pub fn rate_csv(name: &str, report: &RateReport) -> CsvReport {
    let mut c = CsvReport::new(name, &["n", "error", "used_in_fit"]);
    c.meta_f64("slope", report.slope)
        .meta_f64("intercept", report.intercept)
        .meta_f64("r2", report.r2)
        .meta("fit_range", format!("{}..{}", report.used.0, report.used.1))
        .meta("trimming", "rows with used_in_fit = false are excluded (two smallest n and the largest n once 7 or more samples exist)");
    if let Some(p) = report.predicted {
        c.meta_f64("predicted_exponent", p);
    }
    if let Some(v) = report.consistent {
        c.meta("verdict", if v { "consistent" } else { "inconsistent" });
    }
    for (i, &(n, e)) in report.samples.iter().enumerate() {
        let used = i >= report.used.0 && i < report.used.1;
        c.row(vec![fmt_f64(n), fmt_f64(e), used.to_string()]);
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

/// Written next to the CSV outputs of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub crate_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub tolerances: BTreeMap<String, f64>,
    pub outputs: Vec<OutputEntry>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let canonical = serde_json::to_string(&config).expect("json value serializes");
        Self {
            schema_version: SCHEMA_VERSION.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: sha256_hex(canonical.as_bytes()),
            config,
            tolerances: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, dir: &Path, path: &Path) -> Result<(), Error> {
        let bytes = fs::read(path)?;
        let file = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().into_owned();
        self.outputs.push(OutputEntry { file, sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Error> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_version_is_stable() {
        assert_eq!(report_schema_version(), "1.0.0");
    }

    #[test]
    fn csv_round_trip() {
        let mut r = CsvReport::new("t", &["alpha", "p", "q", "value"]);
        r.meta("surface", "cube").meta_f64("tol", 1e-10);
        r.row(vec![fmt_f64(0.5), fmt_f64(2.0), fmt_f64(f64::INFINITY), fmt_f64(0.1 + 0.2)]);
        let text = r.to_csv_string();
        assert!(text.starts_with("# schema_version: 1.0.0\n"));
        let (meta, header, rows) = parse_csv(&text).unwrap();
        assert_eq!(meta["surface"], "cube");
        assert_eq!(header, vec!["alpha", "p", "q", "value"]);
        assert_eq!(rows[0][2].parse::<f64>().unwrap(), f64::INFINITY);
        assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn manifest_hash_is_stable() {
        let cfg = serde_json::json!({"kind": "norms", "level": 3});
        let a = Manifest::new("norms", cfg.clone());
        let b = Manifest::new("norms", cfg);
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
