//! Activation decision procedures.
//!
//! * [`nama_decision`]: a node is active iff it outranks every neighbor.
//!   Needs no messages.
//! * [`DmisComputation`]: one node's share of the distributed maximal
//!   independent set computation for one target slot. Nodes exchange
//!   [`StateAnnouncement`]s and call [`DmisComputation::transition`] once per
//!   phase until no node is undecided.
//! * [`dmis_run_synchronous`]: all nodes of a snapshot run the state machine
//!   in lock step over a perfect channel.
//! * [`greedy_mis_oracle`]: centralized priority-greedy MIS, used as ground
//!   truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphSnapshot, NodeId, Slot};
use crate::priority::{Priority, PrioritySource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeState {
    Undecided,
    Active,
    Inactive,
}

impl NodeState {
    pub fn is_terminal(self) -> bool {
        self != NodeState::Undecided
    }

    /// Two-bit wire code.
    pub fn code(self) -> u8 {
        match self {
            NodeState::Undecided => 0b00,
            NodeState::Active => 0b01,
            NodeState::Inactive => 0b10,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0b00 => Some(NodeState::Undecided),
            0b01 => Some(NodeState::Active),
            0b10 => Some(NodeState::Inactive),
            _ => None,
        }
    }
}

/// A node's state for one target slot, as broadcast to its neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateAnnouncement {
    pub sender: NodeId,
    pub target_slot: Slot,
    pub state: NodeState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DmisError {
    #[error("announcement for slot {got} delivered to computation for slot {expected}")]
    WrongTarget { expected: Slot, got: Slot },
    #[error("announcement from {0}, which is not a neighbor in the snapshot")]
    NotNeighbor(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct NeighborEntry {
    priority: Priority,
    state: NodeState,
}

/// One node's in-flight computation of the MIS for `target_slot`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DmisComputation {
    owner: NodeId,
    priority: Priority,
    target_slot: Slot,
    snapshot_slot: Slot,
    phase: u32,
    local_state: NodeState,
    neighbor_view: BTreeMap<NodeId, NeighborEntry>,
    dropped: u64,
}

impl DmisComputation {
    /// Opens a computation with every neighbor assumed undecided. Neighbor
    /// priorities are computed locally, never received.
    pub fn open(
        owner: NodeId,
        neighbors: impl IntoIterator<Item = NodeId>,
        target_slot: Slot,
        snapshot_slot: Slot,
        priorities: &PrioritySource,
    ) -> Self {
        let neighbor_view = neighbors
            .into_iter()
            .map(|m| {
                let entry = NeighborEntry {
                    priority: priorities.priority(m, target_slot),
                    state: NodeState::Undecided,
                };
                (m, entry)
            })
            .collect();
        DmisComputation {
            owner,
            priority: priorities.priority(owner, target_slot),
            target_slot,
            snapshot_slot,
            phase: 0,
            local_state: NodeState::Undecided,
            neighbor_view,
            dropped: 0,
        }
    }

    /// A computation for a node that is not part of the snapshot: it takes no
    /// part in the target slot and is inactive from the start.
    pub fn absent(owner: NodeId, target_slot: Slot, snapshot_slot: Slot, priorities: &PrioritySource) -> Self {
        let mut c = Self::open(owner, [], target_slot, snapshot_slot, priorities);
        c.local_state = NodeState::Inactive;
        c
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn target_slot(&self) -> Slot {
        self.target_slot
    }

    pub fn snapshot_slot(&self) -> Slot {
        self.snapshot_slot
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn state(&self) -> NodeState {
        self.local_state
    }

    pub fn priority(&self) -> Priority {
        self.priority
    }

    /// Announcements rejected because the sender is not a snapshot neighbor.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbor_view.keys().copied()
    }

    /// Last known state of a neighbor.
    pub fn view_of(&self, neighbor: NodeId) -> Option<NodeState> {
        self.neighbor_view.get(&neighbor).map(|e| e.state)
    }

    pub fn announcement(&self) -> StateAnnouncement {
        StateAnnouncement { sender: self.owner, target_slot: self.target_slot, state: self.local_state }
    }

    /// Records a neighbor's announced state. Returns whether the view changed.
    pub fn receive(&mut self, ann: &StateAnnouncement) -> Result<bool, DmisError> {
        if ann.target_slot != self.target_slot {
            return Err(DmisError::WrongTarget { expected: self.target_slot, got: ann.target_slot });
        }
        let Some(entry) = self.neighbor_view.get_mut(&ann.sender) else {
            self.dropped += 1;
            return Err(DmisError::NotNeighbor(ann.sender));
        };
        let changed = entry.state != ann.state;
        entry.state = ann.state;
        Ok(changed)
    }

    /// Runs the decision step of one phase.
    ///
    /// Join when no higher-priority neighbor is active or undecided; drop out
    /// when a higher-priority neighbor is active; otherwise wait. Terminal
    /// states never change and do not advance the phase counter.
    pub fn transition(&mut self) -> NodeState {
        if self.local_state.is_terminal() {
            return self.local_state;
        }
        self.phase += 1;
        let mut blocked = false;
        for e in self.neighbor_view.values().filter(|e| e.priority > self.priority) {
            match e.state {
                NodeState::Active => {
                    self.local_state = NodeState::Inactive;
                    return self.local_state;
                }
                NodeState::Undecided => blocked = true,
                NodeState::Inactive => {}
            }
        }
        if !blocked {
            self.local_state = NodeState::Active;
        }
        self.local_state
    }
}

/// Local activation rule: `node` is active iff it outranks all `neighbors`.
pub fn nama_decision<'a>(
    node: NodeId,
    neighbors: impl IntoIterator<Item = &'a NodeId>,
    slot: Slot,
    priorities: &PrioritySource,
) -> bool {
    let own = priorities.priority(node, slot);
    neighbors.into_iter().all(|&m| priorities.priority(m, slot) < own)
}

/// Every node of the snapshot that wins under [`nama_decision`].
pub fn nama_winners(snap: &GraphSnapshot, slot: Slot, priorities: &PrioritySource) -> BTreeSet<NodeId> {
    let g = snap.graph();
    g.nodes()
        .filter(|&v| nama_decision(v, g.neighbors(v).into_iter().flatten(), slot, priorities))
        .collect()
}

/// Result of a lock-step run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MisOutcome {
    pub members: BTreeSet<NodeId>,
    pub phases: u32,
}

/// Runs the distributed state machine on every node of `snap` with reliable,
/// synchronous state exchange until no node is undecided.
///
/// Each phase: every node announces its current state to all neighbors, then
/// every undecided node makes one transition.
pub fn dmis_run_synchronous(snap: &GraphSnapshot, slot: Slot, priorities: &PrioritySource) -> MisOutcome {
    let g = snap.graph();
    let mut comps: BTreeMap<NodeId, DmisComputation> = g
        .nodes()
        .map(|v| {
            let ns = g.neighbors(v).into_iter().flatten().copied();
            (v, DmisComputation::open(v, ns, slot, snap.taken_at(), priorities))
        })
        .collect();

    let mut phases = 0;
    let mut undecided: Vec<NodeId> = comps.keys().copied().collect();
    // Nodes whose state changed since they last announced. Everyone starts
    // undecided and views start undecided, so nothing needs sending yet.
    let mut changed: Vec<NodeId> = Vec::new();
    while !undecided.is_empty() {
        phases += 1;
        for sender in changed.drain(..) {
            let ann = comps[&sender].announcement();
            for m in g.neighbors(sender).into_iter().flatten() {
                comps
                    .get_mut(m)
                    .expect("neighbor present in snapshot")
                    .receive(&ann)
                    .expect("snapshot neighbors accept each other");
            }
        }
        undecided.retain(|v| {
            let c = comps.get_mut(v).unwrap();
            if c.transition().is_terminal() {
                changed.push(*v);
                false
            } else {
                true
            }
        });
    }

    let members = comps
        .into_values()
        .filter(|c| c.state() == NodeState::Active)
        .map(|c| c.owner())
        .collect();
    MisOutcome { members, phases }
}

/// Centralized priority-greedy MIS: visit nodes by decreasing priority and
/// keep each one that has no kept neighbor.
pub fn greedy_mis_oracle(snap: &GraphSnapshot, slot: Slot, priorities: &PrioritySource) -> BTreeSet<NodeId> {
    let g = snap.graph();
    let mut order: Vec<(Priority, NodeId)> = g.nodes().map(|v| (priorities.priority(v, slot), v)).collect();
    order.sort_unstable_by(|a, b| b.cmp(a));
    let mut chosen = BTreeSet::new();
    for (_, v) in order {
        if !g.neighbors(v).into_iter().flatten().any(|m| chosen.contains(m)) {
            chosen.insert(v);
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{snapshot, ConflictGraph};
    use crate::topology::fig1_fixture;

    fn n(v: u32) -> NodeId {
        NodeId(v)
    }

    fn fixed(pairs: &[(u32, u64)]) -> PrioritySource {
        PrioritySource::Fixed(pairs.iter().map(|&(i, p)| (n(i), p)).collect())
    }

    /// Exhaustive search over all subsets: the maximal independent sets of
    /// a small graph.
    fn brute_force_mis(g: &ConflictGraph) -> Vec<BTreeSet<NodeId>> {
        let nodes: Vec<NodeId> = g.nodes().collect();
        assert!(nodes.len() <= 16);
        (0u32..1 << nodes.len())
            .map(|mask| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, v)| *v)
                    .collect::<BTreeSet<_>>()
            })
            .filter(|s| g.is_maximal_independent(s))
            .collect()
    }

    #[test]
    fn nama_isolated_node_wins() {
        let src = PrioritySource::Hashed;
        assert!(nama_decision(n(3), &BTreeSet::new(), Slot(0), &src));
    }

    #[test]
    fn nama_adjacent_pair_has_one_winner() {
        let src = PrioritySource::Hashed;
        for t in 0..50 {
            let a = nama_decision(n(1), &BTreeSet::from([n(2)]), Slot(t), &src);
            let b = nama_decision(n(2), &BTreeSet::from([n(1)]), Slot(t), &src);
            assert!(a ^ b);
        }
    }

    #[test]
    fn nama_fig1_only_top_node() {
        let (g, src) = fig1_fixture();
        let winners = nama_winners(&snapshot(&g, Slot(0)), Slot(0), &src);
        assert_eq!(winners, BTreeSet::from([n(7)]));
    }

    #[test]
    fn receive_updates_view() {
        let src = fixed(&[(1, 1), (2, 2)]);
        let mut c = DmisComputation::open(n(1), [n(2)], Slot(4), Slot(0), &src);
        let ann = StateAnnouncement { sender: n(2), target_slot: Slot(4), state: NodeState::Active };
        assert_eq!(c.receive(&ann), Ok(true));
        assert_eq!(c.view_of(n(2)), Some(NodeState::Active));
        // duplicate is idempotent
        let before = c.clone();
        assert_eq!(c.receive(&ann), Ok(false));
        assert_eq!(c, before);
    }

    #[test]
    fn receive_from_stranger_dropped_and_counted() {
        let src = PrioritySource::Hashed;
        let mut c = DmisComputation::open(n(1), [n(2)], Slot(4), Slot(0), &src);
        let ann = StateAnnouncement { sender: n(9), target_slot: Slot(4), state: NodeState::Active };
        assert_eq!(c.receive(&ann), Err(DmisError::NotNeighbor(n(9))));
        assert_eq!(c.dropped(), 1);
        assert_eq!(c.view_of(n(9)), None);
        let wrong = StateAnnouncement { sender: n(2), target_slot: Slot(5), state: NodeState::Active };
        assert!(matches!(c.receive(&wrong), Err(DmisError::WrongTarget { .. })));
        assert_eq!(c.view_of(n(2)), Some(NodeState::Undecided));
    }

    #[test]
    fn top_node_joins_in_first_phase() {
        let src = fixed(&[(1, 10), (2, 2), (3, 3)]);
        let mut c = DmisComputation::open(n(1), [n(2), n(3)], Slot(0), Slot(0), &src);
        assert_eq!(c.transition(), NodeState::Active);
        assert_eq!(c.phase(), 1);
    }

    #[test]
    fn active_higher_neighbor_forces_inactive() {
        let src = fixed(&[(1, 1), (2, 2)]);
        let mut c = DmisComputation::open(n(1), [n(2)], Slot(0), Slot(0), &src);
        c.receive(&StateAnnouncement { sender: n(2), target_slot: Slot(0), state: NodeState::Active })
            .unwrap();
        assert_eq!(c.transition(), NodeState::Inactive);
    }

    #[test]
    fn undecided_higher_neighbor_blocks() {
        let src = fixed(&[(1, 1), (2, 2)]);
        let mut c = DmisComputation::open(n(1), [n(2)], Slot(0), Slot(0), &src);
        assert_eq!(c.transition(), NodeState::Undecided);
        assert_eq!(c.transition(), NodeState::Undecided);
        assert_eq!(c.phase(), 2);
        // once the blocker drops out, the node joins
        c.receive(&StateAnnouncement { sender: n(2), target_slot: Slot(0), state: NodeState::Inactive })
            .unwrap();
        assert_eq!(c.transition(), NodeState::Active);
    }

    #[test]
    fn terminal_state_is_sticky() {
        let src = fixed(&[(1, 5), (2, 2)]);
        let mut c = DmisComputation::open(n(1), [n(2)], Slot(0), Slot(0), &src);
        assert_eq!(c.transition(), NodeState::Active);
        // even a contradicting (impossible) view cannot flip it
        c.receive(&StateAnnouncement { sender: n(2), target_slot: Slot(0), state: NodeState::Active })
            .unwrap();
        assert_eq!(c.transition(), NodeState::Active);
        assert_eq!(c.phase(), 1);
    }

    #[test]
    fn absent_node_is_inactive() {
        let c = DmisComputation::absent(n(4), Slot(9), Slot(1), &PrioritySource::Hashed);
        assert_eq!(c.state(), NodeState::Inactive);
        assert_eq!(c.neighbors().count(), 0);
    }

    #[test]
    fn state_codes_roundtrip() {
        for s in [NodeState::Undecided, NodeState::Active, NodeState::Inactive] {
            assert_eq!(NodeState::from_code(s.code()), Some(s));
        }
        assert_eq!(NodeState::from_code(0b11), None);
    }

    #[test]
    fn synchronous_single_node() {
        let g = ConflictGraph::from_parts([n(1)], []).unwrap();
        let out = dmis_run_synchronous(&snapshot(&g, Slot(0)), Slot(0), &PrioritySource::Hashed);
        assert_eq!(out, MisOutcome { members: BTreeSet::from([n(1)]), phases: 1 });
    }

    #[test]
    fn synchronous_empty_graph() {
        let out = dmis_run_synchronous(&snapshot(&ConflictGraph::new(), Slot(0)), Slot(0), &PrioritySource::Hashed);
        assert!(out.members.is_empty());
        assert_eq!(out.phases, 0);
    }

    #[test]
    fn synchronous_path_with_top_middle() {
        // a=1, b=2, c=3 with b highest
        let g = ConflictGraph::from_parts([n(1), n(2), n(3)], [(n(1), n(2)), (n(2), n(3))]).unwrap();
        let src = fixed(&[(1, 1), (2, 3), (3, 2)]);
        let all = brute_force_mis(&g);
        assert_eq!(all.len(), 2); // {b} and {a, c}
        let out = dmis_run_synchronous(&snapshot(&g, Slot(0)), Slot(0), &src);
        assert_eq!(out.members, BTreeSet::from([n(2)]));
        assert_eq!(out.phases, 2);
        assert!(all.contains(&out.members));
    }

    #[test]
    fn synchronous_fig1() {
        let (g, src) = fig1_fixture();
        let all = brute_force_mis(&g);
        let expected: BTreeSet<_> = [7, 1, 2, 3, 4].map(n).into();
        assert!(all.contains(&expected));
        // largest possible MIS of this graph, so nothing beats it
        assert_eq!(all.iter().map(BTreeSet::len).max(), Some(5));
        let out = dmis_run_synchronous(&snapshot(&g, Slot(0)), Slot(0), &src);
        assert_eq!(out.members, expected);
        assert_eq!(out.phases, 3);
    }

    #[test]
    fn greedy_oracle_cases() {
        let src = PrioritySource::Hashed;
        assert!(greedy_mis_oracle(&snapshot(&ConflictGraph::new(), Slot(0)), Slot(0), &src).is_empty());

        let (g, fsrc) = fig1_fixture();
        assert_eq!(greedy_mis_oracle(&snapshot(&g, Slot(0)), Slot(0), &fsrc), [7, 1, 2, 3, 4].map(n).into());

        let k5 = crate::topology::complete(5);
        let snap = snapshot(&k5, Slot(17));
        let top = k5.nodes().max_by_key(|&v| src.priority(v, Slot(17))).unwrap();
        assert_eq!(greedy_mis_oracle(&snap, Slot(17), &src), BTreeSet::from([top]));
    }

    #[test]
    fn brute_force_agrees_on_small_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let nn = rng.gen_range(1..=10);
            let g = crate::topology::erdos_renyi(nn, 0.35, rng.gen());
            let slot = Slot(rng.gen_range(0..1000));
            let all = brute_force_mis(&g);
            let out = dmis_run_synchronous(&snapshot(&g, slot), slot, &PrioritySource::Hashed);
            assert!(all.contains(&out.members));
        }
    }
}
