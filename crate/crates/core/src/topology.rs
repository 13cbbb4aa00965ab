//! Synthetic conflict-graph generators and canned scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ConflictGraph, GraphError, GraphEvent, NodeId, Slot, TimedEvent};
use crate::priority::{compute_priority, PrioritySource};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology parameter: {0}")]
    Invalid(String),
    #[error("cannot read topology file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("topology file {path}: {source}")]
    Parse { path: PathBuf, source: GraphError },
}

/// How to obtain the conflict graph of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    File { path: PathBuf },
    /// The seven-node concurrency-loss scenario with pinned priorities.
    Fig1,
    RandomGeometric {
        n: u32,
        /// Connection radius in the unit square. When absent,
        /// `mean_degree` picks it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean_degree: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    ErdosRenyi {
        n: u32,
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Complete { n: u32 },
    Path { n: u32 },
}

/// A generated graph plus the priority source it must be run with.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub graph: ConflictGraph,
    pub priorities: PrioritySource,
}

impl TopologySpec {
    /// Checks parameters without generating anything.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |m: &str| Err(TopologyError::Invalid(m.to_string()));
        match *self {
            TopologySpec::RandomGeometric { n, radius, mean_degree, .. } => {
                if n == 0 {
                    return bad("n must be >= 1");
                }
                match (radius, mean_degree) {
                    (Some(r), None) if r.is_finite() && r >= 0.0 => Ok(()),
                    (Some(_), None) => bad("radius must be >= 0"),
                    (None, Some(d)) if d.is_finite() && d >= 0.0 && d <= f64::from(n - 1) => Ok(()),
                    (None, Some(_)) => bad("mean_degree must lie in [0, n-1]"),
                    _ => bad("exactly one of radius and mean_degree must be given"),
                }
            }
            TopologySpec::ErdosRenyi { n, p, .. } => {
                if n == 0 {
                    bad("n must be >= 1")
                } else if !(0.0..=1.0).contains(&p) {
                    bad("p must lie in [0, 1]")
                } else {
                    Ok(())
                }
            }
            TopologySpec::Complete { n } | TopologySpec::Path { n } if n == 0 => bad("n must be >= 1"),
            _ => Ok(()),
        }
    }

    /// Builds the graph. Random families use their own `seed` when given and
    /// `default_seed` otherwise.
    pub fn generate(&self, default_seed: u64) -> Result<Topology, TopologyError> {
        self.validate()?;
        let hashed = |graph| Topology { graph, priorities: PrioritySource::Hashed };
        Ok(match self {
            TopologySpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| TopologyError::Io { path: path.clone(), source })?;
                let graph = ConflictGraph::parse_topology(&text)
                    .map_err(|source| TopologyError::Parse { path: path.clone(), source })?;
                hashed(graph)
            }
            TopologySpec::Fig1 => {
                let (graph, priorities) = fig1_fixture();
                Topology { graph, priorities }
            }
            TopologySpec::RandomGeometric { n, radius, mean_degree, seed } => {
                let r = match (radius, mean_degree) {
                    (Some(r), _) => *r,
                    (None, Some(d)) => radius_for_mean_degree(*n, *d),
                    (None, None) => unreachable!("validated"),
                };
                hashed(random_geometric(*n, r, seed.unwrap_or(default_seed)))
            }
            TopologySpec::ErdosRenyi { n, p, seed } => hashed(erdos_renyi(*n, *p, seed.unwrap_or(default_seed))),
            TopologySpec::Complete { n } => hashed(complete(*n)),
            TopologySpec::Path { n } => hashed(path(*n)),
        })
    }
}

fn ids(n: u32) -> impl Iterator<Item = NodeId> {
    (0..n).map(NodeId)
}

/// Clique on ids `0..n`.
pub fn complete(n: u32) -> ConflictGraph {
    let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (NodeId(a), NodeId(b))));
    ConflictGraph::from_parts(ids(n), edges).expect("valid clique")
}

/// Path `0 - 1 - ... - n-1`.
pub fn path(n: u32) -> ConflictGraph {
    let edges = (1..n).map(|b| (NodeId(b - 1), NodeId(b)));
    ConflictGraph::from_parts(ids(n), edges).expect("valid path")
}

/// G(n, p) on ids `0..n`; pairs are drawn in lexicographic order.
pub fn erdos_renyi(n: u32, p: f64, seed: u64) -> ConflictGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ConflictGraph::from_parts(ids(n), []).expect("distinct ids");
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen::<f64>() < p {
                g.add_edge(NodeId(a), NodeId(b)).expect("fresh edge");
            }
        }
    }
    g
}

/// `n` uniform points in the unit square, joined when at most `radius` apart.
pub fn random_geometric(n: u32, radius: f64, seed: u64) -> ConflictGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
    let r2 = radius * radius;
    let mut g = ConflictGraph::from_parts(ids(n), []).expect("distinct ids");
    for (a, pa) in pts.iter().enumerate() {
        for (b, pb) in pts.iter().enumerate().skip(a + 1) {
            let (dx, dy) = (pa.0 - pb.0, pa.1 - pb.1);
            if dx * dx + dy * dy <= r2 {
                g.add_edge(NodeId(a as u32), NodeId(b as u32)).expect("fresh edge");
            }
        }
    }
    g
}

/// Probability that two uniform points of the unit square lie within `r`
/// of each other (valid for `r <= 1`).
fn unit_square_pair_prob(r: f64) -> f64 {
    std::f64::consts::PI * r * r - 8.0 / 3.0 * r.powi(3) + r.powi(4) / 2.0
}

/// Radius giving expected degree `mean_degree` for `n` points in the unit
/// square, boundary effects included.
pub fn radius_for_mean_degree(n: u32, mean_degree: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let target = mean_degree / f64::from(n - 1);
    if target >= 1.0 {
        return std::f64::consts::SQRT_2;
    }
    // the pair probability is increasing on [0, 1]
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if unit_square_pair_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Edges of the concurrency-loss scenario: a top node adjacent to two
/// hubs, each hub adjacent to two leaves. Nodes are named by rank (7 highest).
pub const FIG1_EDGES: [(u32, u32); 6] = [(7, 5), (7, 6), (5, 1), (5, 2), (6, 3), (6, 4)];

/// The concurrency-loss scenario with ids `1..=7` and priorities pinned to
/// the ids. Only node 7 outranks all its neighbors, while `{7, 1, 2, 3, 4}`
/// is independent.
pub fn fig1_fixture() -> (ConflictGraph, PrioritySource) {
    let g = ConflictGraph::from_parts(
        (1..=7).map(NodeId),
        FIG1_EDGES.iter().map(|&(a, b)| (NodeId(a), NodeId(b))),
    )
    .expect("valid fixture");
    let table: BTreeMap<NodeId, u64> = (1..=7).map(|i| (NodeId(i), u64::from(i))).collect();
    (g, PrioritySource::Fixed(table))
}

/// Fixture ids for running the scenario with hashed priorities.
///
/// Returns `role[r - 1]`, the id that plays rank `r`, chosen among `1..=7`
/// so that the hashed priorities at `slot` order the ids exactly as the
/// ranks require.
pub fn fig1_hashed_roles(slot: Slot) -> [NodeId; 7] {
    let mut by_prio: Vec<NodeId> = (1..=7).map(NodeId).collect();
    by_prio.sort_by_key(|&id| compute_priority(id, slot));
    by_prio.try_into().expect("seven ids")
}

/// The scenario graph relabeled through [`fig1_hashed_roles`] for `slot`.
pub fn fig1_hashed(slot: Slot) -> ConflictGraph {
    let role = fig1_hashed_roles(slot);
    let at = |r: u32| role[(r - 1) as usize];
    ConflictGraph::from_parts(role, FIG1_EDGES.iter().map(|&(a, b)| (at(a), at(b)))).expect("valid fixture")
}

/// Edge churn: at `slot`, removes `fraction` of the current edges and adds
/// the same number of new edges between non-adjacent pairs.
pub fn edge_churn(graph: &ConflictGraph, fraction: f64, slot: Slot, rng: &mut impl Rng) -> Vec<TimedEvent> {
    let edges: Vec<(NodeId, NodeId)> = graph.edges().collect();
    let k = ((edges.len() as f64) * fraction).round() as usize;
    let removed: Vec<_> = edges.choose_multiple(rng, k).copied().collect();
    let nodes: Vec<NodeId> = graph.nodes().collect();
    let mut taken: BTreeSet<(NodeId, NodeId)> = edges.iter().copied().collect();
    let mut added = Vec::new();
    let max_pairs = nodes.len() * nodes.len().saturating_sub(1) / 2;
    while added.len() < k && taken.len() < max_pairs {
        let a = *nodes.choose(rng).expect("nonempty");
        let b = *nodes.choose(rng).expect("nonempty");
        if a == b {
            continue;
        }
        let e = (a.min(b), a.max(b));
        if taken.insert(e) {
            added.push(e);
        }
    }
    removed
        .into_iter()
        .map(|(a, b)| GraphEvent::RemoveEdge(a, b))
        .chain(added.into_iter().map(|(a, b)| GraphEvent::AddEdge(a, b)))
        .map(|event| TimedEvent { slot, event })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_four() {
        let g = complete(4);
        assert_eq!((g.node_count(), g.edge_count()), (4, 6));
    }

    #[test]
    fn path_five() {
        let g = path(5);
        assert_eq!((g.node_count(), g.edge_count()), (5, 4));
    }

    #[test]
    fn fig1_shape() {
        let (g, _) = fig1_fixture();
        assert_eq!((g.node_count(), g.edge_count()), (7, 6));
        for (a, b) in FIG1_EDGES {
            assert!(g.has_edge(NodeId(a), NodeId(b)));
        }
    }

    #[test]
    fn fig1_hashed_roles_realize_rank_order() {
        for t in [0, 8, 123] {
            let slot = Slot(t);
            let role = fig1_hashed_roles(slot);
            for w in role.windows(2) {
                assert!(compute_priority(w[0], slot) < compute_priority(w[1], slot));
            }
            assert_eq!(fig1_hashed(slot).edge_count(), 6);
        }
    }

    #[test]
    fn erdos_renyi_deterministic() {
        let a = erdos_renyi(50, 0.1, 7);
        let b = erdos_renyi(50, 0.1, 7);
        assert_eq!(a, b);
        assert_ne!(a, erdos_renyi(50, 0.1, 8));
    }

    #[test]
    fn geometric_mean_degree_close_to_target() {
        let r = radius_for_mean_degree(100, 6.0);
        let mean: f64 = (0..40)
            .map(|s| {
                let g = random_geometric(100, r, s);
                2.0 * g.edge_count() as f64 / 100.0
            })
            .sum::<f64>()
            / 40.0;
        assert!((mean - 6.0).abs() < 0.4, "mean degree {mean}");
    }

    #[test]
    fn degenerate_params_rejected() {
        assert!(TopologySpec::Complete { n: 0 }.generate(0).is_err());
        let rgg = TopologySpec::RandomGeometric { n: 10, radius: Some(-0.1), mean_degree: None, seed: None };
        assert!(rgg.generate(0).is_err());
        let both = TopologySpec::RandomGeometric { n: 10, radius: Some(0.1), mean_degree: Some(3.0), seed: None };
        assert!(both.validate().is_err());
        assert!(TopologySpec::ErdosRenyi { n: 10, p: 1.5, seed: None }.validate().is_err());
    }

    #[test]
    fn churn_keeps_edge_count() {
        let g = erdos_renyi(30, 0.2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let evs = edge_churn(&g, 0.1, Slot(5), &mut rng);
        let mut h = g.clone();
        for e in &evs {
            h.apply(&e.event).unwrap();
        }
        assert_eq!(h.edge_count(), g.edge_count());
        assert_ne!(h, g);
    }
}
