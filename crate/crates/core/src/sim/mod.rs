//! Slot-driven TDMA simulation.
//!
//! Each slot runs, in order:
//!
//! 1. graph events due at this slot;
//! 2. data arrivals, one draw per node in ascending id order;
//! 3. the protocol decision. ONAMA: every node starts the slot in its
//!    pipeline, then every node (ascending id) broadcasts its control packet,
//!    one delivery draw per instantaneous neighbor (ascending id), then every
//!    node looks up its schedule. NAMA: local-maximum rule on the
//!    instantaneous graph. ORACLE: lock-step DMIS on the instantaneous graph;
//! 4. each active node with queued data sends its head-of-line packet;
//! 5. metrics.
//!
//! Arrivals and control-packet deliveries draw from two streams of the same
//! seed, so the traffic of a seed is identical across protocols.

mod channel;
mod metrics;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::{broadcast_control, ChannelModel};
pub use metrics::{ControlStats, Metrics, MetricsSummary, SlotRecord, SlotTraffic, CSV_HEADER};

use crate::dmis::{dmis_run_synchronous, nama_decision, NodeState};
use crate::graph::{ConflictGraph, GraphError, GraphSnapshot, NodeId, Slot, TimedEvent};
use crate::pipeline::{ControlPacket, PipelineConfig, PipelineEngine, PipelineError};
use crate::priority::PrioritySource;
use crate::topology::Topology;

const TRAFFIC_STREAM: u64 = 0;
const CHANNEL_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "NAMA")]
    Nama,
    #[serde(rename = "ONAMA")]
    Onama,
    #[serde(rename = "ORACLE")]
    Oracle,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Nama => "NAMA",
            Protocol::Onama => "ONAMA",
            Protocol::Oracle => "ORACLE",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bernoulli data arrivals into a FIFO queue per node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModel {
    /// Probability that a node generates one packet in a slot.
    #[serde(default = "default_arrival")]
    pub arrival_prob: f64,
    /// Queue capacity per node; `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_capacity: Option<usize>,
}

fn default_arrival() -> f64 {
    1.0
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel { arrival_prob: default_arrival(), queue_capacity: None }
    }
}

impl TrafficModel {
    pub fn saturated() -> Self {
        Self::default()
    }
}

/// Everything needed to run one simulation.
#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub topology: Topology,
    pub events: Vec<TimedEvent>,
    pub protocol: Protocol,
    pub pipeline: PipelineConfig,
    pub channel: ChannelModel,
    pub traffic: TrafficModel,
    pub slots: u64,
    pub seed: u64,
}

impl SimulationConfig {
    /// A static, reliable, saturated run with default pipeline settings.
    pub fn new(topology: Topology, protocol: Protocol, slots: u64, seed: u64) -> Self {
        SimulationConfig {
            topology,
            events: Vec::new(),
            protocol,
            pipeline: PipelineConfig::default(),
            channel: ChannelModel::default(),
            traffic: TrafficModel::default(),
            slots,
            seed,
        }
    }

    /// Checks ranges and replays the event list against the initial graph.
    pub fn validate(&self) -> Result<(), SimError> {
        self.pipeline.validate()?;
        if !self.channel.is_valid() {
            return Err(SimError::Config("control_delivery_prob must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.traffic.arrival_prob) {
            return Err(SimError::Config("arrival_prob must lie in [0, 1]".into()));
        }
        let cap = self.pipeline.neighbor_capacity as usize;
        let check_degree = |g: &ConflictGraph| {
            if self.protocol == Protocol::Onama && g.max_degree() > cap {
                Err(SimError::Config(format!("graph degree {} exceeds neighbor table size L={cap}", g.max_degree())))
            } else {
                Ok(())
            }
        };
        let mut g = self.topology.graph.clone();
        check_degree(&g)?;
        for w in self.events.windows(2) {
            if w[1].slot < w[0].slot {
                return Err(SimError::Config("events must be sorted by slot".into()));
            }
        }
        for ev in &self.events {
            g.apply(&ev.event).map_err(|source| SimError::Event { slot: ev.slot, source })?;
            check_degree(&g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("event at slot {slot}: {source}")]
    Event { slot: Slot, source: GraphError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// What happened in one slot.
#[derive(Clone, Debug)]
pub struct SlotReport {
    pub slot: Slot,
    pub active: BTreeSet<NodeId>,
    /// The graph the decision for this slot was computed on.
    pub reference: GraphSnapshot,
    pub record: SlotRecord,
}

pub struct Simulation {
    config: SimulationConfig,
    priorities: Arc<PrioritySource>,
    graph: ConflictGraph,
    instant: GraphSnapshot,
    events: VecDeque<TimedEvent>,
    next_slot: Slot,
    engines: BTreeMap<NodeId, PipelineEngine>,
    /// Network-wide snapshots, one per snapshot slot still referenced.
    snapshots: VecDeque<GraphSnapshot>,
    queues: BTreeMap<NodeId, VecDeque<Slot>>,
    traffic_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    metrics: Metrics,
}

impl Simulation {
    pub fn new(config: SimulationConfig) -> Result<Self, SimError> {
        config.validate()?;
        let priorities = Arc::new(config.topology.priorities.clone());
        let graph = config.topology.graph.clone();
        let mut traffic_rng = ChaCha8Rng::seed_from_u64(config.seed);
        traffic_rng.set_stream(TRAFFIC_STREAM);
        let mut channel_rng = ChaCha8Rng::seed_from_u64(config.seed);
        channel_rng.set_stream(CHANNEL_STREAM);
        let mut sim = Simulation {
            priorities,
            instant: GraphSnapshot::take(&graph, Slot(0)),
            events: config.events.iter().copied().collect(),
            next_slot: Slot(0),
            engines: BTreeMap::new(),
            snapshots: VecDeque::new(),
            queues: BTreeMap::new(),
            traffic_rng,
            channel_rng,
            metrics: Metrics::new(config.protocol, u64::from(config.pipeline.depth)),
            graph,
            config,
        };
        for v in sim.graph.nodes().collect::<Vec<_>>() {
            sim.add_node_state(v)?;
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn graph(&self) -> &ConflictGraph {
        &self.graph
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn next_slot(&self) -> Slot {
        self.next_slot
    }

    pub fn engine(&self, id: NodeId) -> Option<&PipelineEngine> {
        self.engines.get(&id)
    }

    fn add_node_state(&mut self, v: NodeId) -> Result<(), SimError> {
        self.queues.insert(v, VecDeque::new());
        if self.config.protocol == Protocol::Onama {
            let e = PipelineEngine::new(v, self.config.pipeline, Arc::clone(&self.priorities))?;
            self.engines.insert(v, e);
        }
        Ok(())
    }

    fn apply_due_events(&mut self, slot: Slot) -> Result<(), SimError> {
        let mut changed = false;
        while self.events.front().is_some_and(|e| e.slot <= slot) {
            let ev = self.events.pop_front().unwrap();
            self.graph.apply(&ev.event).map_err(|source| SimError::Event { slot: ev.slot, source })?;
            match ev.event {
                crate::graph::GraphEvent::AddNode(v) => self.add_node_state(v)?,
                crate::graph::GraphEvent::RemoveNode(v) => {
                    self.engines.remove(&v);
                    self.queues.remove(&v);
                }
                _ => {}
            }
            changed = true;
        }
        if changed {
            self.instant = GraphSnapshot::take(&self.graph, slot);
        }
        Ok(())
    }

    fn generate_traffic(&mut self, slot: Slot) {
        let p = self.config.traffic.arrival_prob;
        let cap = self.config.traffic.queue_capacity;
        for q in self.queues.values_mut() {
            if self.traffic_rng.gen::<f64>() < p {
                if cap.is_some_and(|c| q.len() >= c) {
                    self.metrics.data_dropped += 1;
                } else {
                    q.push_back(slot);
                }
            }
        }
    }

    /// ONAMA decision for `slot`; returns the active set, the snapshot it was
    /// computed on and the number of deadline misses.
    fn onama_slot(&mut self, slot: Slot) -> Result<(BTreeSet<NodeId>, GraphSnapshot, u64), SimError> {
        let pc = self.config.pipeline;
        let g = u64::from(pc.snapshot_period);
        let m = u64::from(pc.depth);
        if slot.0.is_multiple_of(g) {
            self.snapshots.push_back(GraphSnapshot::take(&self.graph, slot));
        }

        let misses_before: u64 = self.engines.values().map(PipelineEngine::miss_count).sum();
        let mut packets: Vec<ControlPacket> = Vec::with_capacity(self.engines.len());
        for e in self.engines.values_mut() {
            packets.push(e.start_slot(&self.graph, slot)?);
        }
        let misses = self.engines.values().map(PipelineEngine::miss_count).sum::<u64>() - misses_before;

        let stats_before = self.engine_stats();
        for pkt in &packets {
            let wire = pkt.encode().expect("depth fits a packet");
            let pkt = ControlPacket::decode(&wire).expect("own encoding decodes");
            self.metrics.control.packets_sent += 1;
            let neighbors = self.graph.neighbors(pkt.sender).into_iter().flatten();
            let reached = broadcast_control(&pkt, neighbors, &self.config.channel, &mut self.channel_rng);
            let degree = self.graph.degree(pkt.sender) as u64;
            self.metrics.control.deliveries += reached.len() as u64;
            self.metrics.control.losses += degree - reached.len() as u64;
            for r in reached {
                self.engines.get_mut(&r).expect("engine per node").receive(&pkt);
            }
        }
        let stats_after = self.engine_stats();
        self.metrics.control.malformed += stats_after.0 - stats_before.0;
        self.metrics.control.stale_announcements += stats_after.1 - stats_before.1;

        let active = self
            .engines
            .values()
            .filter(|e| e.lookup(slot) == NodeState::Active)
            .map(PipelineEngine::owner)
            .collect();

        let reference = if slot.0 >= m {
            let snap_slot = Slot((slot.0 - m) / g * g);
            self.snapshots
                .iter()
                .find(|s| s.taken_at() == snap_slot)
                .cloned()
                .expect("snapshot retained until its last target slot")
        } else {
            self.instant.clone()
        };
        // keep what the next lookups still need
        let oldest_needed = Slot((slot.0 + 1).saturating_sub(m) / g * g);
        while self.snapshots.front().is_some_and(|s| s.taken_at() < oldest_needed) {
            self.snapshots.pop_front();
        }
        Ok((active, reference, misses))
    }

    fn engine_stats(&self) -> (u64, u64) {
        self.engines.values().fold((0, 0), |(a, b), e| {
            let s = e.stats();
            (a + s.malformed_packets, b + s.stale_announcements)
        })
    }

    /// Runs one slot.
    pub fn step(&mut self) -> Result<SlotReport, SimError> {
        let slot = self.next_slot;
        self.apply_due_events(slot)?;
        self.generate_traffic(slot);

        let (active, reference, misses) = match self.config.protocol {
            Protocol::Onama => self.onama_slot(slot)?,
            Protocol::Nama => {
                let g = &self.graph;
                let active = g
                    .nodes()
                    .filter(|&v| nama_decision(v, g.neighbors(v).into_iter().flatten(), slot, &self.priorities))
                    .collect();
                (active, self.instant.clone(), 0)
            }
            Protocol::Oracle => {
                let out = dmis_run_synchronous(&self.instant, slot, &self.priorities);
                (out.members, self.instant.clone(), 0)
            }
        };

        let mut traffic = SlotTraffic { misses, ..Default::default() };
        for v in &active {
            if let Some(gen) = self.queues.get_mut(v).and_then(VecDeque::pop_front) {
                traffic.delays.push(slot.0 - gen.0);
            }
        }
        traffic.queue_total = self.queues.values().map(|q| q.len() as u64).sum();

        let record = self.metrics.record_slot(slot, &active, &self.graph, reference.graph(), &traffic);
        self.next_slot = slot.next();
        Ok(SlotReport { slot, active, reference, record })
    }

    /// Runs the remaining slots and returns the metrics.
    pub fn run(mut self) -> Result<Metrics, SimError> {
        while self.next_slot.0 < self.config.slots {
            self.step()?;
        }
        Ok(self.metrics)
    }
}

/// Validates `config`, runs every slot and returns the metrics.
pub fn run_simulation(config: SimulationConfig) -> Result<Metrics, SimError> {
    Simulation::new(config)?.run()
}
