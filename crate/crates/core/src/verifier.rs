//! Correctness instrumentation.
//!
//! Everything here is a pure function of the topology, a configuration and
//! the Byzantine set:
//!
//! - `V_c`, the correct nodes farther than `c` hops from every Byzantine node;
//! - c-containment: every node of `V_c` satisfies the local specification;
//! - `G*`, the subgraph induced by `V_c` plus the outsiders married into it,
//!   together with a maximality check of the matching the `pref` pairs form;
//! - a brute-force maximality oracle that shares no code with the `G*` check;
//! - closure scanning over configuration sequences;
//! - a diagnostic potential over `V_2`.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::protocol::{classify, spec, Configuration, Status};
use crate::topology::{NodeId, Topology};

/// Hop distance from each node to the nearest Byzantine node, `usize::MAX`
/// when there is none.
pub fn distance_to_byzantine(topo: &Topology, byzantine: &BTreeSet<NodeId>) -> Vec<usize> {
    let mut dist = vec![usize::MAX; topo.node_count()];
    let mut queue: VecDeque<NodeId> = byzantine.iter().copied().collect();
    for &b in byzantine {
        dist[b.index()] = 0;
    }
    while let Some(v) = queue.pop_front() {
        for &u in topo.neighbors(v) {
            if dist[u.index()] == usize::MAX {
                dist[u.index()] = dist[v.index()] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// `V_c`: correct nodes at distance strictly greater than `c` from every
/// Byzantine node.
pub fn c_correct_set(topo: &Topology, byzantine: &BTreeSet<NodeId>, c: usize) -> BTreeSet<NodeId> {
    let dist = distance_to_byzantine(topo, byzantine);
    topo.nodes()
        .filter(|v| !byzantine.contains(v) && dist[v.index()] > c)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub radius: usize,
    pub correct: Vec<NodeId>,
    pub contained: bool,
    pub violators: Vec<NodeId>,
}

impl ContainmentReport {
    /// Containment against a precomputed `V_c`.
    pub fn evaluate(topo: &Topology, cfg: &Configuration, correct: &BTreeSet<NodeId>, radius: usize) -> Self {
        let violators: Vec<NodeId> = correct.iter().copied().filter(|&v| !spec(topo, cfg, v)).collect();
        ContainmentReport {
            radius,
            correct: correct.iter().copied().collect(),
            contained: violators.is_empty(),
            violators,
        }
    }
}

pub fn is_c_contained(topo: &Topology, cfg: &Configuration, byzantine: &BTreeSet<NodeId>, c: usize) -> ContainmentReport {
    ContainmentReport::evaluate(topo, cfg, &c_correct_set(topo, byzantine, c), c)
}

/// Fast containment flag against a precomputed `V_c`.
pub fn contained(topo: &Topology, cfg: &Configuration, correct: &BTreeSet<NodeId>) -> bool {
    correct.iter().all(|&v| spec(topo, cfg, v))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GStarReport {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub matched: Vec<(NodeId, NodeId)>,
    pub is_matching: bool,
    pub is_maximal: bool,
}

/// Builds `G*` for radius `c` and checks whether the mutual `pref` pairs
/// inside it form a maximal matching.
pub fn g_star(topo: &Topology, cfg: &Configuration, byzantine: &BTreeSet<NodeId>, c: usize) -> GStarReport {
    g_star_from(topo, cfg, &c_correct_set(topo, byzantine, c))
}

/// [`g_star`] against a precomputed `V_c`.
pub fn g_star_from(topo: &Topology, cfg: &Configuration, correct: &BTreeSet<NodeId>) -> GStarReport {
    let mut members = vec![false; topo.node_count()];
    for &v in correct {
        members[v.index()] = true;
    }
    for v in topo.nodes() {
        if correct.contains(&v) {
            continue;
        }
        if let Some(u) = cfg.pref(v) {
            if correct.contains(&u) && cfg.pref(u) == Some(v) {
                members[v.index()] = true;
            }
        }
    }
    let nodes: Vec<NodeId> = topo.nodes().filter(|v| members[v.index()]).collect();
    let edges: Vec<(NodeId, NodeId)> = topo
        .edges()
        .into_iter()
        .filter(|(u, v)| members[u.index()] && members[v.index()])
        .collect();
    let matched: Vec<(NodeId, NodeId)> = edges
        .iter()
        .copied()
        .filter(|&(u, v)| cfg.pref(u) == Some(v) && cfg.pref(v) == Some(u))
        .collect();
    let mut degree = vec![0usize; topo.node_count()];
    for &(u, v) in &matched {
        degree[u.index()] += 1;
        degree[v.index()] += 1;
    }
    let is_matching = degree.iter().all(|&d| d <= 1);
    let is_maximal = is_matching && edges.iter().all(|&(u, v)| degree[u.index()] + degree[v.index()] > 0);
    GStarReport { nodes, edges, matched, is_matching, is_maximal }
}

/// Independent brute-force maximality check.
///
/// `pairs` must be a subset of `edges` with pairwise disjoint endpoints, and
/// adding any single remaining edge must break that.
pub fn oracle_check_maximal(edges: &[(NodeId, NodeId)], pairs: &[(NodeId, NodeId)]) -> bool {
    let same_edge = |a: (NodeId, NodeId), b: (NodeId, NodeId)| a == b || a == (b.1, b.0);
    let is_matching = |set: &[(NodeId, NodeId)]| {
        set.iter().enumerate().all(|(i, &(a, b))| {
            a != b
                && set[i + 1..]
                    .iter()
                    .all(|&(c, d)| a != c && a != d && b != c && b != d)
        })
    };
    if !pairs.iter().all(|&p| edges.iter().any(|&e| same_edge(e, p))) || !is_matching(pairs) {
        return false;
    }
    edges
        .iter()
        .filter(|&&e| !pairs.iter().any(|&p| same_edge(e, p)))
        .all(|&e| {
            let mut extended = pairs.to_vec();
            extended.push(e);
            !is_matching(&extended)
        })
}

/// Index `i` of the first step whose configuration `i` is c-contained while
/// configuration `i + 1` is not. `None` means closure held throughout.
pub fn closure_check<'a, I>(topo: &Topology, configs: I, byzantine: &BTreeSet<NodeId>, c: usize) -> Option<usize>
where
    I: IntoIterator<Item = &'a Configuration>,
{
    let correct = c_correct_set(topo, byzantine, c);
    let mut monitor = ClosureMonitor::default();
    configs
        .into_iter()
        .enumerate()
        .find_map(|(i, cfg)| monitor.observe(contained(topo, cfg, &correct)).then(|| i - 1))
}

/// Incremental closure tracking over a stream of containment flags.
#[derive(Debug, Clone, Default)]
pub struct ClosureMonitor {
    previous: Option<bool>,
}

impl ClosureMonitor {
    /// Feeds the next flag; returns `true` when it breaks closure.
    pub fn observe(&mut self, contained: bool) -> bool {
        let broken = self.previous == Some(true) && !contained;
        self.previous = Some(contained);
        broken
    }
}

fn status_weight(status: Status) -> u64 {
    match status {
        Status::Married | Status::Dead => 0,
        Status::Proposing => 1,
        Status::Doomed => 2,
        Status::Single => 3,
    }
}

/// Diagnostic potential: status weights summed over `V_2`. Reported in
/// traces, never used as a correctness gate.
pub fn potential(topo: &Topology, cfg: &Configuration, byzantine: &BTreeSet<NodeId>) -> u64 {
    potential_over(topo, cfg, &c_correct_set(topo, byzantine, 2))
}

pub fn potential_over(topo: &Topology, cfg: &Configuration, nodes: &BTreeSet<NodeId>) -> u64 {
    nodes.iter().map(|&v| status_weight(classify(topo, cfg, v))).sum()
}

/// Outcome of checking the matching property on one contained configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchingTally {
    /// Contained configurations examined.
    pub checked: u64,
    /// Configurations where the `G*` check reported non-maximal.
    pub witness_failures: u64,
    /// Configurations where the `G*` check and the oracle disagreed.
    pub disagreements: u64,
}

impl MatchingTally {
    /// Runs both maximality routes on `cfg`, which the caller has found
    /// contained for `correct`.
    pub fn record(&mut self, topo: &Topology, cfg: &Configuration, correct: &BTreeSet<NodeId>) {
        let report = g_star_from(topo, cfg, correct);
        let oracle = oracle_check_maximal(&report.edges, &report.matched);
        self.checked += 1;
        self.witness_failures += (!report.is_maximal) as u64;
        self.disagreements += (oracle != report.is_maximal) as u64;
    }

    pub fn merge(&mut self, other: &MatchingTally) {
        self.checked += other.checked;
        self.witness_failures += other.witness_failures;
        self.disagreements += other.disagreements;
    }

    pub fn clean(&self) -> bool {
        self.witness_failures == 0 && self.disagreements == 0
    }
}
