//! Running a grid of simulations and aggregating their results.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use onama::{run_simulation, MetricsSummary, Protocol};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentSpec, RunSpec};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub file: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub control_delivery_prob: f64,
    #[serde(rename = "M")]
    pub depth: u32,
    pub summary: MetricsSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub file: String,
    pub error: String,
}

/// Means over seeds for one protocol at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMeans {
    pub protocol: Protocol,
    pub control_delivery_prob: f64,
    #[serde(rename = "M")]
    pub depth: u32,
    pub runs: usize,
    pub mean_concurrency: f64,
    pub mean_throughput: f64,
    pub mean_delay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRatio {
    pub seed: u64,
    pub concurrency: f64,
    pub throughput: f64,
}

/// ONAMA over NAMA at one grid point. Delay is ONAMA's mean delay over
/// NAMA's, so lower is better there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub control_delivery_prob: f64,
    #[serde(rename = "M")]
    pub depth: u32,
    pub concurrency: f64,
    pub throughput: f64,
    pub delay: Option<f64>,
    pub per_seed: Vec<SeedRatio>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentSpec,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
    pub per_protocol: Vec<ProtocolMeans>,
    pub ratios: Vec<Ratios>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<RunFailure>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Grid point key; probabilities compared by bit pattern.
type PointKey = (u64, u32);

fn point(r: &RunResult) -> PointKey {
    (r.control_delivery_prob.to_bits(), r.depth)
}

pub fn aggregate(config: ExperimentSpec, mut runs: Vec<RunResult>, failures: Vec<RunFailure>) -> ExperimentSummary {
    runs.sort_by(|a, b| a.file.cmp(&b.file));
    let mut groups: BTreeMap<(Protocol, PointKey), Vec<&RunResult>> = BTreeMap::new();
    for r in &runs {
        groups.entry((r.protocol, point(r))).or_default().push(r);
    }
    let per_protocol = groups
        .iter()
        .map(|(&(protocol, _), rs)| ProtocolMeans {
            protocol,
            control_delivery_prob: rs[0].control_delivery_prob,
            depth: rs[0].depth,
            runs: rs.len(),
            mean_concurrency: mean(rs.iter().map(|r| r.summary.mean_concurrency)).unwrap_or(0.0),
            mean_throughput: mean(rs.iter().map(|r| r.summary.mean_throughput)).unwrap_or(0.0),
            mean_delay: mean(rs.iter().filter_map(|r| r.summary.mean_delay)),
        })
        .collect::<Vec<_>>();

    let mut ratios = Vec::new();
    let find = |p: Protocol, key: PointKey| {
        per_protocol.iter().find(|m| m.protocol == p && (m.control_delivery_prob.to_bits(), m.depth) == key)
    };
    let keys: BTreeSet<PointKey> = groups.keys().map(|&(_, k)| k).collect();
    for key in keys {
        let (Some(o), Some(n)) = (find(Protocol::Onama, key), find(Protocol::Nama, key)) else {
            continue;
        };
        let by_seed = |p: Protocol| -> BTreeMap<u64, &RunResult> {
            groups.get(&(p, key)).into_iter().flatten().map(|r| (r.seed, *r)).collect()
        };
        let (os, ns) = (by_seed(Protocol::Onama), by_seed(Protocol::Nama));
        let per_seed = os
            .iter()
            .filter_map(|(seed, o)| {
                ns.get(seed).map(|n| SeedRatio {
                    seed: *seed,
                    concurrency: ratio(o.summary.mean_concurrency, n.summary.mean_concurrency),
                    throughput: ratio(o.summary.mean_throughput, n.summary.mean_throughput),
                })
            })
            .collect();
        ratios.push(Ratios {
            control_delivery_prob: o.control_delivery_prob,
            depth: o.depth,
            concurrency: ratio(o.mean_concurrency, n.mean_concurrency),
            throughput: ratio(o.mean_throughput, n.mean_throughput),
            delay: o.mean_delay.zip(n.mean_delay).map(|(a, b)| ratio(a, b)),
            per_seed,
        });
    }
    let seeds = config.seeds.clone();
    ExperimentSummary { config, seeds, runs, per_protocol, ratios, failures }
}

fn run_one(run: &RunSpec, dir: &Path) -> Result<RunResult, RunFailure> {
    let file = format!("{}.csv", run.file_stem());
    let fail = |e: String| RunFailure { file: file.clone(), error: e };
    let metrics = run_simulation(run.config.clone()).map_err(|e| fail(e.to_string()))?;
    let path = dir.join(&file);
    let out = File::create(&path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    metrics.write_csv(BufWriter::new(out)).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    Ok(RunResult {
        file: file.clone(),
        protocol: run.protocol,
        seed: run.seed,
        control_delivery_prob: run.control_delivery_prob,
        depth: run.depth,
        summary: metrics.summary(),
    })
}

/// Runs every grid point in parallel, writes one CSV per run and the
/// summary. Finished runs are kept even when others fail.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentSummary, CliError> {
    let runs = spec.runs()?;
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.clone(), source: e })?;
    let results: Vec<_> = runs.par_iter().map(|r| run_one(r, dir)).collect();
    let (mut ok, mut failed) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(f) => failed.push(f),
        }
    }
    let summary = aggregate(spec.clone(), ok, failed);
    write_summary(&summary, &dir.join(SUMMARY_FILE))?;
    if summary.failures.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::RunsFailed(summary.failures.iter().map(|f| format!("{}: {}", f.file, f.error)).collect()))
    }
}

pub fn write_summary(summary: &ExperimentSummary, path: &Path) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::to_writer_pretty(BufWriter::new(f), summary)
        .map_err(|e| CliError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })
}

pub fn read_summary(path: &Path) -> Result<ExperimentSummary, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Location of the summary inside an output directory.
pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join(SUMMARY_FILE)
}
