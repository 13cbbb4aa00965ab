//! Experiment files: one JSON document describing a grid of runs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use onama::{
    parse_events, ChannelModel, PipelineConfig, Protocol, SimulationConfig, TimedEvent, TopologySpec, TrafficModel,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Parameters swept on top of the base settings. An empty list keeps the
/// base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub control_delivery_prob: Vec<f64>,
    #[serde(rename = "M", default, skip_serializing_if = "Vec::is_empty")]
    pub depth: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub topology: TopologySpec,
    /// Timed graph events, one `<slot> <event>` per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    pub protocols: Vec<Protocol>,
    pub slots: u64,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub traffic: TrafficModel,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: Grid,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One point of the grid, ready to run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub protocol: Protocol,
    pub seed: u64,
    pub control_delivery_prob: f64,
    pub depth: u32,
    pub config: SimulationConfig,
}

impl RunSpec {
    /// Output file name, unique within an experiment.
    pub fn file_stem(&self) -> String {
        format!("{}_p{}_M{}_seed{}", self.protocol.name(), self.control_delivery_prob, self.depth, self.seed)
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, a)| xs[..i].iter().any(|b| b == a))
}

impl ExperimentSpec {
    /// Reads, resolves relative paths against the file's directory and
    /// validates every grid point.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        spec.resolve_paths(base);
        spec.validate()?;
        Ok(spec)
    }

    /// Parses without touching the file system.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TopologySpec::File { path } = &mut self.topology {
            fix(path);
        }
        if let Some(p) = &mut self.events {
            fix(p);
        }
    }

    fn probs(&self) -> Vec<f64> {
        if self.grid.control_delivery_prob.is_empty() {
            vec![self.channel.control_delivery_prob]
        } else {
            self.grid.control_delivery_prob.clone()
        }
    }

    fn depths(&self) -> Vec<u32> {
        if self.grid.depth.is_empty() {
            vec![self.pipeline.depth]
        } else {
            self.grid.depth.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.runs().map(|_| ())
    }

    fn load_events(&self) -> Result<Vec<TimedEvent>, CliError> {
        let Some(path) = &self.events else {
            return Ok(Vec::new());
        };
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("events: {}: {e}", path.display())))?;
        parse_events(&text).map_err(|e| config_err(format!("events: {}: {e}", path.display())))
    }

    /// Expands the spec into protocol x seed x probability x depth runs.
    pub fn runs(&self) -> Result<Vec<RunSpec>, CliError> {
        if self.protocols.is_empty() {
            return Err(config_err("protocols must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        if self.slots == 0 {
            return Err(config_err("slots must be >= 1"));
        }
        if has_duplicates(&self.protocols) {
            return Err(config_err("protocols must be distinct"));
        }
        if has_duplicates(&self.seeds) {
            return Err(config_err("seeds must be distinct"));
        }
        if has_duplicates(&self.grid.control_delivery_prob) {
            return Err(config_err("grid.control_delivery_prob must be distinct"));
        }
        if has_duplicates(&self.grid.depth) {
            return Err(config_err("grid.M must be distinct"));
        }
        self.topology.validate().map_err(|e| config_err(format!("topology: {e}")))?;
        let events = self.load_events()?;

        let mut out = Vec::new();
        let mut graphs_checked = BTreeSet::new();
        for &seed in &self.seeds {
            let topology = self.topology.generate(seed).map_err(|e| config_err(format!("topology: {e}")))?;
            for &p in &self.probs() {
                for &m in &self.depths() {
                    for &protocol in &self.protocols {
                        let mut config = SimulationConfig::new(topology.clone(), protocol, self.slots, seed);
                        config.events = events.clone();
                        config.pipeline = PipelineConfig { depth: m, ..self.pipeline };
                        config.channel = ChannelModel::lossy(p);
                        config.traffic = self.traffic;
                        // event replay is the costly part of validation; the
                        // graph only depends on the seed, the L check on protocol
                        let key = (seed, protocol == Protocol::Onama);
                        if graphs_checked.insert(key) {
                            config.validate().map_err(|e| config_err(e.to_string()))?;
                        } else {
                            config.pipeline.validate().map_err(|e| config_err(e.to_string()))?;
                            if !config.channel.is_valid() {
                                return Err(config_err("control_delivery_prob must lie in [0, 1]"));
                            }
                        }
                        out.push(RunSpec { protocol, seed, control_delivery_prob: p, depth: m, config });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Reads and validates an experiment file.
pub fn parse_experiment(path: &Path) -> Result<ExperimentSpec, CliError> {
    ExperimentSpec::from_file(path)
}
