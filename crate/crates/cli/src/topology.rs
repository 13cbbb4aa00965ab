//! `gen-topology`: writes generated graphs in the text topology format.

use clap::ValueEnum;
use onama::topology::fig1_hashed;
use onama::{ConflictGraph, Slot, TopologySpec};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Fig1,
    Complete,
    Path,
    ErdosRenyi,
    RandomGeometric,
}

#[derive(Clone, Debug, Default)]
pub struct GenParams {
    pub n: Option<u32>,
    pub p: Option<f64>,
    pub radius: Option<f64>,
    pub mean_degree: Option<f64>,
    pub seed: u64,
    /// For `fig1`: the slot whose hashed priorities the ids are chosen for.
    pub slot: u64,
}

/// Builds a graph for writing to a file. Files carry no priorities, so
/// `fig1` uses ids whose hashed priorities reproduce the scenario at
/// `params.slot`.
pub fn generate_topology(kind: GenKind, params: &GenParams) -> Result<ConflictGraph, CliError> {
    let need_n = || params.n.ok_or_else(|| CliError::Config("--n is required".into()));
    let spec = match kind {
        GenKind::Fig1 => return Ok(fig1_hashed(Slot(params.slot))),
        GenKind::Complete => TopologySpec::Complete { n: need_n()? },
        GenKind::Path => TopologySpec::Path { n: need_n()? },
        GenKind::ErdosRenyi => TopologySpec::ErdosRenyi {
            n: need_n()?,
            p: params.p.ok_or_else(|| CliError::Config("--p is required".into()))?,
            seed: Some(params.seed),
        },
        GenKind::RandomGeometric => TopologySpec::RandomGeometric {
            n: need_n()?,
            radius: params.radius,
            mean_degree: params.mean_degree,
            seed: Some(params.seed),
        },
    };
    spec.generate(params.seed)
        .map(|t| t.graph)
        .map_err(|e| CliError::Config(e.to_string()))
}
