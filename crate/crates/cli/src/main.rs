use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use onama_cli::summarize::{format_table, summarize_dir};
use onama_cli::topology::GenParams;
use onama_cli::{generate_topology, parse_experiment, run_experiment, CliError, GenKind};

#[derive(Parser)]
#[command(name = "onama", version, about = "Slot scheduling experiments on conflict graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every grid point of an experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated conflict graph.
    GenTopology {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<u32>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        mean_degree: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        slot: u64,
    },
    /// Print per-file means of the CSVs in a directory.
    Summarize {
        #[arg(long = "in")]
        dir: PathBuf,
        /// Leading slots left out of the means.
        #[arg(long, default_value_t = 0)]
        warmup: u64,
    },
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run { config, seed, out } => {
            let mut spec = parse_experiment(&config)?;
            if let Some(s) = seed {
                spec.seeds = vec![s];
            }
            if let Some(o) = out {
                spec.output_dir = o;
            }
            let summary = run_experiment(&spec)?;
            for m in &summary.per_protocol {
                println!(
                    "{:<6} p={:<5} M={:<3} runs={:<3} concurrency={:.3} throughput={:.3} delay={}",
                    m.protocol.name(),
                    m.control_delivery_prob,
                    m.depth,
                    m.runs,
                    m.mean_concurrency,
                    m.mean_throughput,
                    m.mean_delay.map_or("-".into(), |d| format!("{d:.2}")),
                );
            }
            for r in &summary.ratios {
                println!(
                    "ONAMA:NAMA p={} M={} concurrency {:.2}x throughput {:.2}x",
                    r.control_delivery_prob, r.depth, r.concurrency, r.throughput
                );
            }
            Ok(())
        }
        Cmd::GenTopology { kind, out, n, p, radius, mean_degree, seed, slot } => {
            let g = generate_topology(kind, &GenParams { n, p, radius, mean_degree, seed, slot })?;
            fs::write(&out, g.to_topology_string()).map_err(|e| CliError::Io { path: out.clone(), source: e })?;
            eprintln!("{}: {} nodes, {} edges", out.display(), g.node_count(), g.edge_count());
            Ok(())
        }
        Cmd::Summarize { dir, warmup } => {
            print!("{}", format_table(&summarize_dir(&dir, warmup)?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
