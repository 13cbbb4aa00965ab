//! Re-reading per-slot CSV files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
struct Row {
    slot: u64,
    protocol: String,
    concurrency: u64,
    delivered: u64,
    #[allow(dead_code)]
    queue_total: u64,
    misses: u64,
    violations_snapshot: u64,
    violations_instant: u64,
}

/// Per-file aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSummary {
    pub file: PathBuf,
    pub protocol: String,
    pub slots: u64,
    pub mean_concurrency: f64,
    pub mean_throughput: f64,
    pub misses: u64,
    pub violations_snapshot: u64,
    pub violations_instant: u64,
}

/// Summarizes one CSV, skipping rows with `slot < warmup` in the means.
pub fn summarize_csv(path: &Path, warmup: u64) -> Result<CsvSummary, CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let mut s = CsvSummary {
        file: path.to_path_buf(),
        protocol: String::new(),
        slots: 0,
        mean_concurrency: 0.0,
        mean_throughput: 0.0,
        misses: 0,
        violations_snapshot: 0,
        violations_instant: 0,
    };
    let (mut measured, mut conc, mut thr) = (0u64, 0u64, 0u64);
    for row in rdr.deserialize() {
        let r: Row = row.map_err(|e| bad(&e))?;
        if s.slots == 0 {
            s.protocol = r.protocol.clone();
        }
        s.slots += 1;
        s.misses += r.misses;
        s.violations_snapshot += r.violations_snapshot;
        s.violations_instant += r.violations_instant;
        if r.slot >= warmup {
            measured += 1;
            conc += r.concurrency;
            thr += r.delivered;
        }
    }
    if measured > 0 {
        s.mean_concurrency = conc as f64 / measured as f64;
        s.mean_throughput = thr as f64 / measured as f64;
    }
    Ok(s)
}

/// Summarizes every `*.csv` in `dir`, sorted by file name.
pub fn summarize_dir(dir: &Path, warmup: u64) -> Result<Vec<CsvSummary>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            files.push(p);
        }
    }
    files.sort();
    files.iter().map(|p| summarize_csv(p, warmup)).collect()
}

pub fn format_table(rows: &[CsvSummary]) -> String {
    let mut out = format!(
        "{:<40} {:<7} {:>6} {:>11} {:>11} {:>7} {:>9}\n",
        "file", "proto", "slots", "concurrency", "throughput", "misses", "conflicts"
    );
    for r in rows {
        let name = r.file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push_str(&format!(
            "{:<40} {:<7} {:>6} {:>11.3} {:>11.3} {:>7} {:>9}\n",
            name, r.protocol, r.slots, r.mean_concurrency, r.mean_throughput, r.misses, r.violations_snapshot
        ));
    }
    out
}
