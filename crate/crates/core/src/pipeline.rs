//! Pipelined precomputation of activation schedules.
//!
//! In slot `t` a node opens the MIS computation for slot `t + M`, advances
//! every computation still in flight by one phase, and broadcasts the states
//! of all of them in a single [`ControlPacket`]. When slot `d` arrives its
//! computation has had `M` phases; the node reads the outcome instead of
//! computing anything. A node still undecided at the deadline stays silent.
//!
//! Graph snapshots are taken every `G` slots. The computation opened in slot
//! `t` uses the snapshot taken at `G * floor(t / G)`, so every node works on
//! the same topology for a given target slot.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmis::{DmisComputation, DmisError, NodeState, StateAnnouncement};
use crate::graph::{ConflictGraph, NodeId, Slot};
use crate::priority::PrioritySource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("node {node} has {degree} neighbors, neighbor table holds {capacity}")]
    NeighborTableOverflow { node: NodeId, degree: usize, capacity: u32 },
    #[error("slot {got} started out of order (expected {expected})")]
    OutOfOrder { expected: Slot, got: Slot },
}

/// Tuning knobs of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Pipeline depth `M`: slots of lookahead.
    #[serde(rename = "M", default = "default_depth")]
    pub depth: u32,
    /// Snapshot period `G` in slots.
    #[serde(rename = "G", default = "default_period")]
    pub snapshot_period: u32,
    /// Subslots per slot `S`: one data subslot, the rest for control.
    #[serde(rename = "S", default = "default_subslots")]
    pub subslots: u32,
    /// Neighbor table capacity `L`.
    #[serde(rename = "L", default = "default_capacity")]
    pub neighbor_capacity: u32,
}

fn default_depth() -> u32 {
    8
}
fn default_period() -> u32 {
    1
}
fn default_subslots() -> u32 {
    2
}
fn default_capacity() -> u32 {
    128
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            depth: default_depth(),
            snapshot_period: default_period(),
            subslots: default_subslots(),
            neighbor_capacity: default_capacity(),
        }
    }
}

/// Largest depth a control packet can carry (one-byte count).
pub const MAX_DEPTH: u32 = u8::MAX as u32;

impl PipelineConfig {
    pub fn new(depth: u32, snapshot_period: u32, subslots: u32, neighbor_capacity: u32) -> Result<Self, PipelineError> {
        let c = PipelineConfig { depth, snapshot_period, subslots, neighbor_capacity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.depth < 1 {
            return bad("M must be >= 1");
        }
        if self.depth > MAX_DEPTH {
            return bad("M must be <= 255");
        }
        if self.snapshot_period < 1 || self.snapshot_period > self.depth {
            return bad("G must satisfy 1 <= G <= M");
        }
        if self.subslots < 2 {
            return bad("S must be >= 2");
        }
        if self.neighbor_capacity < 1 {
            return bad("L must be >= 1");
        }
        Ok(())
    }

    /// Most snapshots a node ever holds: those referenced by the `M`
    /// computations in flight plus the newest one.
    pub fn max_live_snapshots(&self) -> usize {
        let (m, g) = (self.depth as usize, self.snapshot_period as usize);
        1 + (m - 1).div_ceil(g)
    }

    /// Bits of snapshot storage per node: one bit per neighbor-table entry
    /// per live snapshot.
    pub fn snapshot_memory_bits(&self) -> usize {
        self.max_live_snapshots() * self.neighbor_capacity as usize
    }

    /// Intermediate neighbor states stored per node: `L * M`.
    pub fn state_memory_entries(&self) -> usize {
        self.neighbor_capacity as usize * self.depth as usize
    }

    fn snapshot_slot_for(&self, opening: Slot) -> Slot {
        let g = u64::from(self.snapshot_period);
        Slot(opening.0 / g * g)
    }
}

/// Aggregated states of all in-flight computations of one node.
///
/// `states[k]` is the sender's state for target slot `base_slot + 1 + k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlPacket {
    pub sender: NodeId,
    pub base_slot: Slot,
    pub states: Vec<NodeState>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("packet too short: {0} bytes")]
    Truncated(usize),
    #[error("expected {expected} bytes for {count} states, got {got}")]
    LengthMismatch { count: u8, expected: usize, got: usize },
    #[error("invalid state code {code:#04b} at entry {index}")]
    BadState { index: usize, code: u8 },
    #[error("nonzero padding bits")]
    BadPadding,
    #[error("{0} states do not fit in one packet")]
    TooManyStates(usize),
}

const HEADER_LEN: usize = 4 + 8 + 1;

impl ControlPacket {
    /// Wire format: sender (u32 BE), base slot (u64 BE), count (u8), then the
    /// states two bits each, first state in the high bits of the first byte,
    /// zero-padded to a byte boundary.
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let count = u8::try_from(self.states.len()).map_err(|_| CodecError::TooManyStates(self.states.len()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.states.len().div_ceil(4));
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out.extend_from_slice(&self.base_slot.0.to_be_bytes());
        out.push(count);
        for chunk in self.states.chunks(4) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |b, (i, s)| b | s.code() << (6 - 2 * i));
            out.push(byte);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated(bytes.len()));
        }
        let sender = NodeId(u32::from_be_bytes(bytes[0..4].try_into().unwrap()));
        let base_slot = Slot(u64::from_be_bytes(bytes[4..12].try_into().unwrap()));
        let count = bytes[12];
        let body = &bytes[HEADER_LEN..];
        let expected = usize::from(count).div_ceil(4);
        if body.len() != expected {
            return Err(CodecError::LengthMismatch { count, expected: HEADER_LEN + expected, got: bytes.len() });
        }
        let mut states = Vec::with_capacity(count.into());
        for index in 0..usize::from(count) {
            let code = body[index / 4] >> (6 - 2 * (index % 4)) & 0b11;
            states.push(NodeState::from_code(code).ok_or(CodecError::BadState { index, code })?);
        }
        let used_bits = 2 * (usize::from(count) % 4);
        if used_bits != 0 && body[expected - 1] & (0xff >> used_bits) != 0 {
            return Err(CodecError::BadPadding);
        }
        Ok(ControlPacket { sender, base_slot, states })
    }

    /// Target slots covered, in order.
    pub fn targets(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.states.len() as u64).map(|k| Slot(self.base_slot.0 + 1 + k))
    }
}

/// A node's view of the graph at a snapshot slot. `None` when the node was
/// not in the graph at that moment.
#[derive(Clone, Debug, PartialEq, Eq)]
struct LocalSnapshot {
    taken_at: Slot,
    neighbors: Option<Arc<BTreeSet<NodeId>>>,
}

/// Counters kept by an engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    /// Target slots that reached their deadline undecided.
    pub misses: u64,
    /// Control packets rejected as malformed.
    pub malformed_packets: u64,
    /// Announcements from nodes that are not neighbors in the snapshot.
    pub stale_announcements: u64,
}

/// One node's pipeline: up to `M` computations in flight and the finalized
/// decisions for slots whose deadline has passed.
#[derive(Clone, Debug)]
pub struct PipelineEngine {
    owner: NodeId,
    config: PipelineConfig,
    priorities: Arc<PrioritySource>,
    inflight: BTreeMap<Slot, DmisComputation>,
    schedule: BTreeMap<Slot, NodeState>,
    snapshots: VecDeque<LocalSnapshot>,
    last_slot: Option<Slot>,
    stats: EngineStats,
}

impl PipelineEngine {
    pub fn new(owner: NodeId, config: PipelineConfig, priorities: Arc<PrioritySource>) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(PipelineEngine {
            owner,
            config,
            priorities,
            inflight: BTreeMap::new(),
            schedule: BTreeMap::new(),
            snapshots: VecDeque::new(),
            last_slot: None,
            stats: EngineStats::default(),
        })
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn miss_count(&self) -> u64 {
        self.stats.misses
    }

    /// Target slots currently being computed, ascending.
    pub fn inflight_targets(&self) -> Vec<Slot> {
        self.inflight.keys().copied().collect()
    }

    pub fn computation(&self, target: Slot) -> Option<&DmisComputation> {
        self.inflight.get(&target)
    }

    pub fn live_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    /// Begins `slot`: finalizes the decision for `slot`, takes a snapshot when
    /// due, opens the computation for `slot + M`, runs one phase of every
    /// undecided computation and returns the packet to broadcast.
    pub fn start_slot(&mut self, graph: &ConflictGraph, slot: Slot) -> Result<ControlPacket, PipelineError> {
        if let Some(last) = self.last_slot {
            if slot != last.next() {
                return Err(PipelineError::OutOfOrder { expected: last.next(), got: slot });
            }
        }

        // Snapshot first so a table overflow leaves the engine untouched.
        let snap_slot = self.config.snapshot_slot_for(slot);
        let fresh = if snap_slot == slot { Some(self.local_snapshot(graph, slot)?) } else { None };
        self.last_slot = Some(slot);

        if let Some(comp) = self.inflight.remove(&slot) {
            let decided = match comp.state() {
                NodeState::Undecided => {
                    self.stats.misses += 1;
                    NodeState::Inactive
                }
                s => s,
            };
            self.schedule.insert(slot, decided);
        }
        self.schedule.retain(|&s, _| s >= slot);

        if let Some(snap) = fresh {
            self.snapshots.push_back(snap);
        }

        let target = Slot(slot.0 + u64::from(self.config.depth));
        let snap = self.snapshots.iter().rev().find(|s| s.taken_at == snap_slot);
        let comp = match snap.and_then(|s| s.neighbors.as_ref()) {
            Some(ns) => DmisComputation::open(self.owner, ns.iter().copied(), target, snap_slot, &self.priorities),
            // not in the graph at snapshot time, or joined after it
            None => DmisComputation::absent(self.owner, target, snap_slot, &self.priorities),
        };
        self.inflight.insert(target, comp);

        for comp in self.inflight.values_mut() {
            comp.transition();
        }

        self.prune_snapshots(snap_slot);
        debug_assert!(self.inflight.len() <= self.config.depth as usize);
        debug_assert!(self.snapshots.len() <= self.config.max_live_snapshots());
        Ok(self.control_packet(slot))
    }

    fn local_snapshot(&self, graph: &ConflictGraph, slot: Slot) -> Result<LocalSnapshot, PipelineError> {
        let neighbors = match graph.neighbors(self.owner) {
            Some(ns) if ns.len() > self.config.neighbor_capacity as usize => {
                return Err(PipelineError::NeighborTableOverflow {
                    node: self.owner,
                    degree: ns.len(),
                    capacity: self.config.neighbor_capacity,
                })
            }
            Some(ns) => Some(Arc::new(ns.clone())),
            None => None,
        };
        Ok(LocalSnapshot { taken_at: slot, neighbors })
    }

    fn prune_snapshots(&mut self, newest: Slot) {
        let referenced: BTreeSet<Slot> = self.inflight.values().map(DmisComputation::snapshot_slot).collect();
        self.snapshots
            .retain(|s| s.taken_at == newest || referenced.contains(&s.taken_at));
    }

    fn control_packet(&self, slot: Slot) -> ControlPacket {
        let base_slot = self.inflight.keys().next().map_or(slot, |first| Slot(first.0 - 1));
        ControlPacket {
            sender: self.owner,
            base_slot,
            states: self.inflight.values().map(DmisComputation::state).collect(),
        }
    }

    /// Routes every entry of a neighbor's packet to the matching in-flight
    /// computation. Entries for targets not in flight are ignored.
    pub fn receive(&mut self, pkt: &ControlPacket) {
        if pkt.states.len() > self.config.depth as usize || pkt.base_slot.0.checked_add(pkt.states.len() as u64).is_none() {
            self.stats.malformed_packets += 1;
            return;
        }
        for (target, &state) in pkt.targets().zip(&pkt.states) {
            let Some(comp) = self.inflight.get_mut(&target) else { continue };
            let ann = StateAnnouncement { sender: pkt.sender, target_slot: target, state };
            match comp.receive(&ann) {
                Ok(_) => {}
                Err(DmisError::NotNeighbor(_)) => self.stats.stale_announcements += 1,
                Err(DmisError::WrongTarget { .. }) => unreachable!("routed by target"),
            }
        }
    }

    /// Decision for the current slot. Slots without a precomputed schedule
    /// (warm-up) and deadline misses are inactive.
    pub fn lookup(&self, slot: Slot) -> NodeState {
        match self.schedule.get(&slot) {
            Some(NodeState::Active) => NodeState::Active,
            _ => NodeState::Inactive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(v: u32) -> NodeId {
        NodeId(v)
    }

    fn engine(id: u32, m: u32, g: u32) -> PipelineEngine {
        PipelineEngine::new(n(id), PipelineConfig::new(m, g, 2, 16).unwrap(), Arc::new(PrioritySource::Hashed)).unwrap()
    }

    #[test]
    fn config_ranges() {
        assert!(PipelineConfig::new(0, 1, 2, 8).is_err());
        assert!(PipelineConfig::new(4, 0, 2, 8).is_err());
        assert!(PipelineConfig::new(4, 5, 2, 8).is_err());
        assert!(PipelineConfig::new(4, 2, 1, 8).is_err());
        assert!(PipelineConfig::new(4, 2, 2, 0).is_err());
        assert!(PipelineConfig::new(256, 2, 2, 8).is_err());
        let c = PipelineConfig::new(8, 2, 3, 32).unwrap();
        assert_eq!(c.state_memory_entries(), 256);
        assert_eq!(c.max_live_snapshots(), 5);
        assert_eq!(c.snapshot_memory_bits(), 160);
        assert_eq!(PipelineConfig::new(8, 1, 2, 32).unwrap().max_live_snapshots(), 8);
    }

    #[test]
    fn computation_for_slot_four_spans_slots_zero_to_three() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let mut e = engine(1, 4, 1);
        for t in 0..4 {
            e.start_slot(&g, Slot(t)).unwrap();
            assert!(e.inflight_targets().contains(&Slot(4)), "slot {t}");
        }
        e.start_slot(&g, Slot(4)).unwrap();
        assert!(!e.inflight_targets().contains(&Slot(4)));
        assert_eq!(e.lookup(Slot(4)), NodeState::Active);
    }

    #[test]
    fn steady_state_targets() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let mut e = engine(1, 4, 1);
        for t in 0..=3 {
            e.start_slot(&g, Slot(t)).unwrap();
        }
        assert_eq!(e.inflight_targets(), [4, 5, 6, 7].map(Slot));
    }

    #[test]
    fn isolated_node_finalizes_active_immediately() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let mut e = engine(1, 6, 1);
        let pkt = e.start_slot(&g, Slot(0)).unwrap();
        assert_eq!(pkt.states, vec![NodeState::Active]);
        assert_eq!(e.computation(Slot(6)).unwrap().phase(), 1);
    }

    #[test]
    fn warm_up_is_inactive() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let mut e = engine(1, 3, 1);
        for t in 0..3 {
            e.start_slot(&g, Slot(t)).unwrap();
            assert_eq!(e.lookup(Slot(t)), NodeState::Inactive);
        }
        e.start_slot(&g, Slot(3)).unwrap();
        assert_eq!(e.lookup(Slot(3)), NodeState::Active);
        assert_eq!(e.miss_count(), 0);
    }

    #[test]
    fn out_of_order_slots_rejected() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let mut e = engine(1, 3, 1);
        e.start_slot(&g, Slot(5)).unwrap();
        assert_eq!(
            e.start_slot(&g, Slot(7)).unwrap_err(),
            PipelineError::OutOfOrder { expected: Slot(6), got: Slot(7) }
        );
    }

    #[test]
    fn neighbor_table_overflow() {
        let g = crate::topology::complete(5);
        let cfg = PipelineConfig::new(2, 1, 2, 3).unwrap();
        let mut e = PipelineEngine::new(n(0), cfg, Arc::new(PrioritySource::Hashed)).unwrap();
        assert!(matches!(e.start_slot(&g, Slot(0)), Err(PipelineError::NeighborTableOverflow { degree: 4, .. })));
    }

    /// Two adjacent nodes over a perfect channel.
    fn two_node_run(m: u32, slots: u64) -> (PipelineEngine, PipelineEngine) {
        let g = ConflictGraph::from_parts([n(1), n(2)], [(n(1), n(2))]).unwrap();
        let (mut a, mut b) = (engine(1, m, 1), engine(2, m, 1));
        for t in 0..slots {
            let pa = a.start_slot(&g, Slot(t)).unwrap();
            let pb = b.start_slot(&g, Slot(t)).unwrap();
            a.receive(&pb);
            b.receive(&pa);
        }
        (a, b)
    }

    #[test]
    fn two_nodes_learn_terminal_states_in_two_slots() {
        let m = 3;
        let (a, b) = two_node_run(m, 2);
        let target = Slot(u64::from(m));
        let (ca, cb) = (a.computation(target).unwrap(), b.computation(target).unwrap());
        assert!(ca.state().is_terminal() && cb.state().is_terminal());
        assert_eq!(ca.view_of(n(2)), Some(cb.state()));
        assert_eq!(cb.view_of(n(1)), Some(ca.state()));
        assert_ne!(ca.state(), cb.state());
    }

    #[test]
    fn all_entries_update_views() {
        let (mut a, _) = two_node_run(3, 3);
        let pkt = ControlPacket { sender: n(2), base_slot: Slot(2), states: vec![NodeState::Inactive; 3] };
        a.receive(&pkt);
        for t in [3, 4, 5] {
            assert_eq!(a.computation(Slot(t)).unwrap().view_of(n(2)), Some(NodeState::Inactive));
        }
    }

    #[test]
    fn stale_packet_ignored() {
        let (mut a, _) = two_node_run(3, 10);
        let before: Vec<_> = a.inflight_targets().iter().map(|t| a.computation(*t).unwrap().clone()).collect();
        let pkt = ControlPacket { sender: n(2), base_slot: Slot(1), states: vec![NodeState::Active; 3] };
        a.receive(&pkt);
        let after: Vec<_> = a.inflight_targets().iter().map(|t| a.computation(*t).unwrap().clone()).collect();
        assert_eq!(before, after);
        assert_eq!(a.stats(), EngineStats::default());
    }

    #[test]
    fn oversized_packet_counted_as_malformed() {
        let (mut a, _) = two_node_run(3, 4);
        let pkt = ControlPacket { sender: n(2), base_slot: Slot(3), states: vec![NodeState::Active; 4] };
        a.receive(&pkt);
        assert_eq!(a.stats().malformed_packets, 1);
    }

    #[test]
    fn silence_causes_misses() {
        // neither node hears the other; the lower one never decides
        let g = ConflictGraph::from_parts([n(1), n(2)], [(n(1), n(2))]).unwrap();
        let (mut a, mut b) = (engine(1, 2, 1), engine(2, 2, 1));
        for t in 0..10 {
            a.start_slot(&g, Slot(t)).unwrap();
            b.start_slot(&g, Slot(t)).unwrap();
            if t >= 2 {
                let (sa, sb) = (a.lookup(Slot(t)), b.lookup(Slot(t)));
                assert!(!(sa == NodeState::Active && sb == NodeState::Active));
                assert!(sa == NodeState::Active || sb == NodeState::Active);
            }
        }
        assert_eq!(a.miss_count() + b.miss_count(), 8);
    }

    #[test]
    fn snapshot_period_shares_snapshots() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let mut e = engine(1, 4, 2);
        for t in 0..20 {
            e.start_slot(&g, Slot(t)).unwrap();
            assert!(e.live_snapshots() <= e.config().max_live_snapshots());
            let newest = e.computation(Slot(t + 4)).unwrap().snapshot_slot();
            assert_eq!(newest, Slot(t / 2 * 2));
        }
    }

    #[test]
    fn codec_golden_bytes() {
        let pkt = ControlPacket {
            sender: n(0x0102_0304),
            base_slot: Slot(9),
            states: vec![NodeState::Active, NodeState::Inactive, NodeState::Undecided, NodeState::Active, NodeState::Inactive],
        };
        let bytes = pkt.encode().unwrap();
        assert_eq!(
            bytes,
            vec![1, 2, 3, 4, 0, 0, 0, 0, 0, 0, 0, 9, 5, 0b0110_0001, 0b1000_0000]
        );
        assert_eq!(ControlPacket::decode(&bytes).unwrap(), pkt);
    }

    #[test]
    fn codec_rejects_bad_input() {
        assert!(matches!(ControlPacket::decode(&[0; 5]), Err(CodecError::Truncated(5))));
        let mut ok = ControlPacket { sender: n(1), base_slot: Slot(0), states: vec![NodeState::Active] }
            .encode()
            .unwrap();
        ok.push(0);
        assert!(matches!(ControlPacket::decode(&ok), Err(CodecError::LengthMismatch { .. })));
        ok.pop();
        *ok.last_mut().unwrap() = 0b1100_0000;
        assert!(matches!(ControlPacket::decode(&ok), Err(CodecError::BadState { index: 0, code: 3 })));
        *ok.last_mut().unwrap() = 0b0100_0001;
        assert_eq!(ControlPacket::decode(&ok), Err(CodecError::BadPadding));
        let big = ControlPacket { sender: n(1), base_slot: Slot(0), states: vec![NodeState::Active; 256] };
        assert_eq!(big.encode(), Err(CodecError::TooManyStates(256)));
    }

    fn arb_state() -> impl Strategy<Value = NodeState> {
        prop_oneof![Just(NodeState::Undecided), Just(NodeState::Active), Just(NodeState::Inactive)]
    }

    proptest! {
        #[test]
        fn codec_roundtrip(sender in any::<u32>(), base in any::<u64>(), states in proptest::collection::vec(arb_state(), 0..=255)) {
            let pkt = ControlPacket { sender: NodeId(sender), base_slot: Slot(base), states };
            let bytes = pkt.encode().unwrap();
            prop_assert_eq!(bytes.len(), 13 + pkt.states.len().div_ceil(4));
            prop_assert_eq!(ControlPacket::decode(&bytes).unwrap(), pkt);
        }
    }
}
