//! Collision-free TDMA node activation on conflict graphs.
//!
//! Three activation rules are provided over a common conflict-graph model:
//! the local-maximum rule (NAMA), distributed maximal-independent-set
//! activation with pipelined precomputation (ONAMA), and a centralized
//! priority-greedy oracle. [`sim`] drives any of them slot by slot over a
//! lossy control channel and records concurrency, throughput and delay.

pub mod dmis;
pub mod graph;
pub mod pipeline;
pub mod priority;
pub mod sim;
pub mod topology;

pub use dmis::{
    dmis_run_synchronous, greedy_mis_oracle, nama_decision, nama_winners, DmisComputation, DmisError, MisOutcome,
    NodeState, StateAnnouncement,
};
pub use graph::{
    parse_events, snapshot, ConflictGraph, GraphError, GraphEvent, GraphSnapshot, NodeId, Slot, TimedEvent,
};
pub use pipeline::{CodecError, ControlPacket, EngineStats, PipelineConfig, PipelineEngine, PipelineError};
pub use priority::{compute_priority, Priority, PrioritySource};
pub use sim::{
    run_simulation, ChannelModel, Metrics, MetricsSummary, Protocol, SimError, Simulation, SimulationConfig,
    SlotReport, TrafficModel,
};
pub use topology::{Topology, TopologyError, TopologySpec};
