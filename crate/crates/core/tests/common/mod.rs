//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the library's own classifiers or matching checks; each
//! predicate is re-derived from the raw `pref` values.

#![allow(dead_code)]

use ssmm::protocol::Configuration;
use ssmm::topology::{NodeId, Topology};

/// The five status predicates of node `v`, evaluated separately, in the
/// order proposing, married, doomed, dead, single.
pub fn predicates(topo: &Topology, cfg: &Configuration, v: NodeId) -> [bool; 5] {
    let pref = |x: NodeId| cfg.states()[x.index()].pref;
    let married = |x: NodeId| topo.neighbors(x).iter().any(|&u| pref(x) == Some(u) && pref(u) == Some(x));
    let nbrs = topo.neighbors(v);
    let proposing = nbrs.iter().any(|&u| pref(v) == Some(u) && pref(u).is_none());
    let doomed = nbrs.iter().any(|&u| {
        topo.neighbors(u).iter().any(|&w| pref(v) == Some(u) && pref(u) == Some(w) && w != v)
    });
    let dead = pref(v).is_none() && nbrs.iter().all(|&u| married(u));
    let single = pref(v).is_none() && nbrs.iter().any(|&u| !married(u));
    [proposing, married(v), doomed, dead, single]
}

/// Edges `(u, v)`, `u < v`, whose endpoints point at each other.
pub fn mutual_pairs(topo: &Topology, cfg: &Configuration) -> Vec<(usize, usize)> {
    let pref = |x: usize| cfg.states()[x].pref.map(|p| p.index());
    (0..topo.node_count())
        .flat_map(|u| (u + 1..topo.node_count()).map(move |v| (u, v)))
        .filter(|&(u, v)| pref(u) == Some(v) && pref(v) == Some(u))
        .collect()
}

/// Matching: pairwise disjoint edges of the graph. Maximal: no edge with
/// both endpoints unmatched.
pub fn is_maximal_matching(edges: &[(usize, usize)], pairs: &[(usize, usize)], n: usize) -> bool {
    let mut matched = vec![false; n];
    for &(u, v) in pairs {
        let is_edge = edges.iter().any(|&e| e == (u, v) || e == (v, u));
        if !is_edge || matched[u] || matched[v] {
            return false;
        }
        matched[u] = true;
        matched[v] = true;
    }
    edges.iter().all(|&(u, v)| matched[u] || matched[v])
}

pub fn edge_indices(topo: &Topology) -> Vec<(usize, usize)> {
    topo.edges().iter().map(|(u, v)| (u.index(), v.index())).collect()
}

/// Every connected labeled graph on `n` nodes, by brute force over edge
/// subsets, reduced to isomorphism classes by comparing sorted degree
/// sequences and exhaustive relabeling.
pub fn connected_graph_classes(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let perms = permutations(n);
    let mut classes: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> =
            pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect();
        if !connected(n, &edges) {
            continue;
        }
        let canon = perms
            .iter()
            .map(|p| {
                let mut e: Vec<(usize, usize)> =
                    edges.iter().map(|&(u, v)| (p[u].min(p[v]), p[u].max(p[v]))).collect();
                e.sort();
                e
            })
            .min()
            .unwrap();
        if seen.insert(canon) {
            classes.push(edges);
        }
    }
    classes
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            let w = if a == u { b } else if b == u { a } else { continue };
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}
