//! Conflict graphs, topology change events and immutable snapshots.
//!
//! A node of the conflict graph is a contention entity (a radio or a link of
//! the underlying network); an edge joins two entities that must not be
//! active in the same slot. This module never interprets what a node stands
//! for.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a contention entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

/// Index of a TDMA slot, counted from 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Slot(pub u64);

impl Slot {
    pub fn next(self) -> Slot {
        Slot(self.0 + 1)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for Slot {
    fn from(v: u64) -> Self {
        Slot(v)
    }
}

type Adjacency = BTreeMap<NodeId, BTreeSet<NodeId>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("edge {0}-{1} already exists")]
    DuplicateEdge(NodeId, NodeId),
    #[error("edge {0}-{1} does not exist")]
    UnknownEdge(NodeId, NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected conflict graph with symmetric adjacency and no self-loops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConflictGraph {
    adj: Adjacency,
}

impl ConflictGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from a node list and an edge list. Edge endpoints that
    /// are missing from `nodes` are rejected.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let mut g = ConflictGraph::new();
        for n in nodes {
            g.add_node(n)?;
        }
        for (a, b) in edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.adj.contains_key(&id)
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.get(&a).is_some_and(|n| n.contains(&b))
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    /// Each undirected edge once, as `(low, high)`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj
            .iter()
            .flat_map(|(&a, ns)| ns.range(a..).map(move |&b| (a, b)))
    }

    pub fn neighbors(&self, id: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.adj.get(&id)
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adj.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn max_degree(&self) -> usize {
        self.adj.values().map(BTreeSet::len).max().unwrap_or(0)
    }

    pub fn add_node(&mut self, id: NodeId) -> Result<(), GraphError> {
        if self.adj.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.adj.insert(id, BTreeSet::new());
        Ok(())
    }

    /// Removes a node together with all of its incident edges.
    pub fn remove_node(&mut self, id: NodeId) -> Result<(), GraphError> {
        let ns = self.adj.remove(&id).ok_or(GraphError::UnknownNode(id))?;
        for n in ns {
            if let Some(back) = self.adj.get_mut(&n) {
                back.remove(&id);
            }
        }
        Ok(())
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        for n in [a, b] {
            if !self.adj.contains_key(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        if self.has_edge(a, b) {
            return Err(GraphError::DuplicateEdge(a.min(b), a.max(b)));
        }
        self.adj.get_mut(&a).unwrap().insert(b);
        self.adj.get_mut(&b).unwrap().insert(a);
        Ok(())
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        if !self.has_edge(a, b) {
            for n in [a, b] {
                if !self.adj.contains_key(&n) {
                    return Err(GraphError::UnknownNode(n));
                }
            }
            return Err(GraphError::UnknownEdge(a.min(b), a.max(b)));
        }
        self.adj.get_mut(&a).unwrap().remove(&b);
        self.adj.get_mut(&b).unwrap().remove(&a);
        Ok(())
    }

    /// Applies one topology change. On error the graph is left untouched.
    pub fn apply(&mut self, event: &GraphEvent) -> Result<(), GraphError> {
        match *event {
            GraphEvent::AddNode(n) => self.add_node(n),
            GraphEvent::RemoveNode(n) => self.remove_node(n),
            GraphEvent::AddEdge(a, b) => self.add_edge(a, b),
            GraphEvent::RemoveEdge(a, b) => self.remove_edge(a, b),
        }
    }

    /// True when no two members of `set` are adjacent.
    pub fn is_independent(&self, set: &BTreeSet<NodeId>) -> bool {
        self.conflicting_pairs(set) == 0
    }

    /// Number of edges with both endpoints in `set`.
    pub fn conflicting_pairs(&self, set: &BTreeSet<NodeId>) -> usize {
        set.iter()
            .filter_map(|a| self.adj.get(a).map(|ns| (a, ns)))
            .map(|(a, ns)| ns.range(a..).filter(|b| set.contains(b)).count())
            .sum()
    }

    /// True when `set` is independent and every other node has a neighbor in it.
    pub fn is_maximal_independent(&self, set: &BTreeSet<NodeId>) -> bool {
        set.iter().all(|n| self.contains_node(*n))
            && self.is_independent(set)
            && self
                .adj
                .iter()
                .filter(|(n, _)| !set.contains(n))
                .all(|(_, ns)| ns.iter().any(|m| set.contains(m)))
    }

    /// Parses the line-oriented topology format:
    ///
    /// ```text
    /// # comment
    /// node 1
    /// node 2
    /// edge 1 2
    /// ```
    pub fn parse_topology(text: &str) -> Result<Self, GraphError> {
        let mut g = ConflictGraph::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = strip_comment(raw);
            let mut it = content.split_whitespace();
            let Some(kind) = it.next() else { continue };
            let args: Vec<&str> = it.collect();
            let res = match (kind, args.as_slice()) {
                ("node", [id]) => g.add_node(parse_id(id, line)?),
                ("edge", [a, b]) => g.add_edge(parse_id(a, line)?, parse_id(b, line)?),
                _ => {
                    return Err(GraphError::Parse {
                        line,
                        msg: format!("unrecognized record `{}`", content.trim()),
                    })
                }
            };
            res.map_err(|e| GraphError::Parse { line, msg: e.to_string() })?;
        }
        Ok(g)
    }

    /// Renders the graph in the format accepted by [`ConflictGraph::parse_topology`].
    pub fn to_topology_string(&self) -> String {
        let mut out = String::new();
        for n in self.nodes() {
            out.push_str(&format!("node {n}\n"));
        }
        for (a, b) in self.edges() {
            out.push_str(&format!("edge {a} {b}\n"));
        }
        out
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

fn parse_id(tok: &str, line: usize) -> Result<NodeId, GraphError> {
    tok.parse::<u32>().map(NodeId).map_err(|_| GraphError::Parse {
        line,
        msg: format!("invalid node id `{tok}`"),
    })
}

/// A topology change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphEvent {
    AddNode(NodeId),
    RemoveNode(NodeId),
    AddEdge(NodeId, NodeId),
    RemoveEdge(NodeId, NodeId),
}

impl fmt::Display for GraphEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphEvent::AddNode(n) => write!(f, "add-node {n}"),
            GraphEvent::RemoveNode(n) => write!(f, "remove-node {n}"),
            GraphEvent::AddEdge(a, b) => write!(f, "add-edge {a} {b}"),
            GraphEvent::RemoveEdge(a, b) => write!(f, "remove-edge {a} {b}"),
        }
    }
}

impl FromStr for GraphEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let id = |t: &str| t.parse::<u32>().map(NodeId).map_err(|_| format!("invalid node id `{t}`"));
        match toks.as_slice() {
            ["add-node", n] => Ok(GraphEvent::AddNode(id(n)?)),
            ["remove-node", n] => Ok(GraphEvent::RemoveNode(id(n)?)),
            ["add-edge", a, b] => Ok(GraphEvent::AddEdge(id(a)?, id(b)?)),
            ["remove-edge", a, b] => Ok(GraphEvent::RemoveEdge(id(a)?, id(b)?)),
            _ => Err(format!("unrecognized event `{s}`")),
        }
    }
}

/// A topology change due at the start of a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub slot: Slot,
    pub event: GraphEvent,
}

/// Parses an event file: one `<slot> <event>` record per line, `#` comments.
/// Records are returned sorted by slot; records sharing a slot keep file order.
pub fn parse_events(text: &str) -> Result<Vec<TimedEvent>, GraphError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let (slot, rest) = content.split_once(char::is_whitespace).ok_or(GraphError::Parse {
            line,
            msg: format!("missing event after slot in `{content}`"),
        })?;
        let slot = slot.parse::<u64>().map(Slot).map_err(|_| GraphError::Parse {
            line,
            msg: format!("invalid slot `{slot}`"),
        })?;
        let event = rest.parse().map_err(|msg| GraphError::Parse { line, msg })?;
        out.push(TimedEvent { slot, event });
    }
    out.sort_by_key(|e| e.slot);
    Ok(out)
}

pub fn events_to_string(events: &[TimedEvent]) -> String {
    events.iter().map(|e| format!("{} {}\n", e.slot, e.event)).collect()
}

/// Immutable copy of a conflict graph taken at a given slot.
///
/// Cloning is cheap: the adjacency is shared.
#[derive(Clone, Debug)]
pub struct GraphSnapshot {
    taken_at: Slot,
    graph: Arc<ConflictGraph>,
}

impl GraphSnapshot {
    pub fn take(graph: &ConflictGraph, slot: Slot) -> Self {
        GraphSnapshot { taken_at: slot, graph: Arc::new(graph.clone()) }
    }

    pub fn taken_at(&self) -> Slot {
        self.taken_at
    }

    pub fn graph(&self) -> &ConflictGraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.graph.contains_node(id)
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.graph.has_edge(a, b)
    }

    pub fn neighbors(&self, id: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.graph.neighbors(id)
    }
}

/// Takes an immutable snapshot of `graph` at `slot`.
pub fn snapshot(graph: &ConflictGraph, slot: Slot) -> GraphSnapshot {
    GraphSnapshot::take(graph, slot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: u32) -> NodeId {
        NodeId(v)
    }

    fn star(leaves: u32) -> ConflictGraph {
        let nodes = (0..=leaves).map(n);
        let edges = (1..=leaves).map(|l| (n(0), n(l)));
        ConflictGraph::from_parts(nodes, edges).unwrap()
    }

    #[test]
    fn add_node_to_empty() {
        let mut g = ConflictGraph::new();
        g.apply(&GraphEvent::AddNode(n(9))).unwrap();
        assert_eq!(g.nodes().collect::<Vec<_>>(), vec![n(9)]);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn removing_star_center_clears_edges() {
        let mut g = star(5);
        assert_eq!(g.edge_count(), 5);
        g.apply(&GraphEvent::RemoveNode(n(0))).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.node_count(), 5);
        assert!(g.nodes().all(|x| g.degree(x) == 0));
    }

    #[test]
    fn duplicate_edge_rejected() {
        let mut g = ConflictGraph::from_parts([n(1), n(2)], []).unwrap();
        g.apply(&GraphEvent::AddEdge(n(1), n(2))).unwrap();
        assert_eq!(
            g.apply(&GraphEvent::AddEdge(n(2), n(1))),
            Err(GraphError::DuplicateEdge(n(1), n(2)))
        );
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn malformed_events_rejected() {
        let mut g = ConflictGraph::from_parts([n(1), n(2)], []).unwrap();
        assert_eq!(g.apply(&GraphEvent::AddEdge(n(1), n(3))), Err(GraphError::UnknownNode(n(3))));
        assert_eq!(g.apply(&GraphEvent::AddEdge(n(1), n(1))), Err(GraphError::SelfLoop(n(1))));
        assert_eq!(g.apply(&GraphEvent::RemoveNode(n(4))), Err(GraphError::UnknownNode(n(4))));
        assert_eq!(g.apply(&GraphEvent::RemoveEdge(n(1), n(2))), Err(GraphError::UnknownEdge(n(1), n(2))));
        assert_eq!(g.apply(&GraphEvent::AddNode(n(1))), Err(GraphError::DuplicateNode(n(1))));
    }

    #[test]
    fn snapshot_of_empty_graph() {
        let s = snapshot(&ConflictGraph::new(), Slot(0));
        assert_eq!(s.node_count(), 0);
    }

    #[test]
    fn snapshot_survives_later_mutation() {
        let mut g = ConflictGraph::from_parts([n(1), n(2)], [(n(1), n(2))]).unwrap();
        let s = snapshot(&g, Slot(3));
        g.apply(&GraphEvent::RemoveEdge(n(1), n(2))).unwrap();
        assert!(!g.has_edge(n(1), n(2)));
        assert!(s.has_edge(n(1), n(2)));
        assert_eq!(s.taken_at(), Slot(3));
    }

    #[test]
    fn topology_text_roundtrip() {
        let text = "# star\nnode 0\nnode 1  # leaf\nnode 2\n\nedge 0 1\nedge 2 0\n";
        let g = ConflictGraph::parse_topology(text).unwrap();
        assert_eq!(g.edge_count(), 2);
        let again = ConflictGraph::parse_topology(&g.to_topology_string()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn topology_parse_errors_carry_line() {
        let err = ConflictGraph::parse_topology("node 1\nedge 1 2\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }), "{err}");
        let err = ConflictGraph::parse_topology("node x\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 1, .. }));
        let err = ConflictGraph::parse_topology("vertex 1\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 1, .. }));
    }

    #[test]
    fn event_file_parses_and_sorts() {
        let text = "# changes\n5 remove-edge 1 2\n2 add-node 7\n2 add-edge 7 1 # new link\n";
        let evs = parse_events(text).unwrap();
        assert_eq!(
            evs,
            vec![
                TimedEvent { slot: Slot(2), event: GraphEvent::AddNode(n(7)) },
                TimedEvent { slot: Slot(2), event: GraphEvent::AddEdge(n(7), n(1)) },
                TimedEvent { slot: Slot(5), event: GraphEvent::RemoveEdge(n(1), n(2)) },
            ]
        );
        assert_eq!(parse_events(&events_to_string(&evs)).unwrap(), evs);
        assert!(parse_events("3 teleport 1").is_err());
        assert!(parse_events("x add-node 1").is_err());
        assert!(parse_events("4").is_err());
    }

    #[test]
    fn mis_checks() {
        let g = star(3);
        let leaves: BTreeSet<_> = (1..=3).map(n).collect();
        assert!(g.is_maximal_independent(&leaves));
        assert!(g.is_maximal_independent(&BTreeSet::from([n(0)])));
        assert!(!g.is_maximal_independent(&BTreeSet::from([n(1)])));
        assert_eq!(g.conflicting_pairs(&BTreeSet::from([n(0), n(1), n(2)])), 2);
    }
}
