//! Static communication graphs.
//!
//! A [`Topology`] is an undirected, connected, simple graph over dense node
//! ids `0..n`. Each adjacency list is kept sorted ascending; that order is the
//! cyclic order processors use when scanning for a new partner.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense processor identifier in `[0, n)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse::<u32>().map(NodeId)
    }
}

/// Immutable undirected connected graph with canonically ordered neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<NodeId>>,
}

impl Topology {
    /// Builds a topology from an undirected edge list.
    ///
    /// Rejects self-loops, duplicate edges, out-of-range endpoints, `n < 2`
    /// and disconnected graphs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::Usage(format!("topology needs at least 2 nodes, got {n}")));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Usage(format!("edge ({u}, {v}) out of range for n={n}")));
            }
            if u == v {
                return Err(Error::Usage(format!("self-loop on node {u}")));
            }
            if adjacency[u].contains(&NodeId::from(v)) {
                return Err(Error::Usage(format!("duplicate edge ({u}, {v})")));
            }
            adjacency[u].push(NodeId::from(v));
            adjacency[v].push(NodeId::from(u));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let topo = Topology { adjacency };
        if !topo.is_connected() {
            return Err(Error::Usage("topology is not connected".into()));
        }
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn nodes(&self) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator + '_ {
        (0..self.adjacency.len()).map(NodeId::from)
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.adjacency.len()
    }

    /// Neighbors of `v` in canonical cyclic order.
    ///
    /// Panics when `v` is out of range; use [`Topology::try_neighbors`] for
    /// user-supplied ids.
    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.index()]
    }

    pub fn try_neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        self.adjacency
            .get(v.index())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Usage(format!("node {v} out of range (n={})", self.node_count())))
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v.index()].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn are_adjacent(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u.index()].binary_search(&v).is_ok()
    }

    /// Position of `u` in the neighbor list of `v`.
    pub fn neighbor_position(&self, v: NodeId, u: NodeId) -> Option<usize> {
        self.adjacency[v.index()].binary_search(&u).ok()
    }

    /// Edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for v in self.nodes() {
            for &u in self.neighbors(v) {
                if v < u {
                    out.push((v, u));
                }
            }
        }
        out
    }

    /// First neighbor of `v` strictly after `after` in the cyclic order
    /// accepted by `accept`. The scan wraps around and visits `after` last,
    /// so each neighbor is considered exactly once.
    pub fn cyclic_successor<F>(&self, v: NodeId, after: NodeId, mut accept: F) -> Result<Option<NodeId>>
    where
        F: FnMut(NodeId) -> bool,
    {
        let list = self.try_neighbors(v)?;
        let start = list
            .binary_search(&after)
            .map_err(|_| Error::Usage(format!("{after} is not a neighbor of {v}")))?;
        let deg = list.len();
        Ok((1..=deg).map(|k| list[(start + k) % deg]).find(|&w| accept(w)))
    }

    /// Hop distances from `source` to every node.
    pub fn bfs_distances(&self, source: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        dist[source.index()] = 0;
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()];
            for &u in self.neighbors(v) {
                if dist[u.index()] == usize::MAX {
                    dist[u.index()] = d + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn distance(&self, u: NodeId, v: NodeId) -> usize {
        self.bfs_distances(u)[v.index()]
    }

    fn is_connected(&self) -> bool {
        self.bfs_distances(NodeId(0)).iter().all(|&d| d != usize::MAX)
    }

    /// Parses the edge-list text format: the first non-comment line holds
    /// `n`, every following line one `u v` edge. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (lineno, header) = lines
            .next()
            .ok_or_else(|| Error::Config("empty topology file".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Config(format!("line {lineno}: expected node count, got {header:?}")))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Config(format!("line {lineno}: expected `u v`, got {line:?}")))
            };
            let u = parse(parts.next())?;
            let v = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Config(format!("line {lineno}: trailing tokens in {line:?}")));
            }
            edges.push((u, v));
        }
        Topology::from_edges(n, &edges).map_err(|e| Error::Config(e.to_string()))
    }

    /// Renders the edge-list text format accepted by [`Topology::parse`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.node_count());
        for (u, v) in self.edges() {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }

    pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        match *spec {
            GeneratorSpec::Path(n) => {
                let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
                Topology::from_edges(n, &edges)
            }
            GeneratorSpec::Ring(n) => {
                if n < 3 {
                    return Err(Error::Usage(format!("ring needs at least 3 nodes, got {n}")));
                }
                let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
                Topology::from_edges(n, &edges)
            }
            GeneratorSpec::Star(n) => {
                let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
                Topology::from_edges(n, &edges)
            }
            GeneratorSpec::Grid { rows, cols } => {
                let n = rows * cols;
                let mut edges = Vec::new();
                for r in 0..rows {
                    for c in 0..cols {
                        let id = r * cols + c;
                        if c + 1 < cols {
                            edges.push((id, id + 1));
                        }
                        if r + 1 < rows {
                            edges.push((id, id + cols));
                        }
                    }
                }
                Topology::from_edges(n, &edges)
            }
            GeneratorSpec::Gnp { n, p } => {
                if n < 2 {
                    return Err(Error::Usage(format!("gnp needs at least 2 nodes, got {n}")));
                }
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Usage(format!("gnp edge probability must lie in (0, 1], got {p}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                const MAX_ATTEMPTS: usize = 10_000;
                for _ in 0..MAX_ATTEMPTS {
                    let mut edges = Vec::new();
                    for u in 0..n {
                        for v in (u + 1)..n {
                            if rng.gen_bool(p) {
                                edges.push((u, v));
                            }
                        }
                    }
                    if let Ok(topo) = Topology::from_edges(n, &edges) {
                        return Ok(topo);
                    }
                }
                Err(Error::Usage(format!(
                    "gnp(n={n}, p={p}) produced no connected graph in {MAX_ATTEMPTS} attempts"
                )))
            }
        }
    }
}

/// Topology generator selection, parsed from `kind:params`
/// (`path:4`, `ring:6`, `star:5`, `grid:3x2`, `gnp:8:0.4`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorSpec {
    Path(usize),
    Ring(usize),
    /// `n` nodes: center 0 and leaves `1..n`.
    Star(usize),
    Grid { rows: usize, cols: usize },
    Gnp { n: usize, p: f64 },
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("bad generator spec {s:?}; expected path:N, ring:N, star:N, grid:RxC or gnp:N:P"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let args: Vec<&str> = parts.collect();
        let count = |i: usize| -> Result<usize> { args.get(i).and_then(|a| a.parse().ok()).ok_or_else(bad) };
        let spec = match (kind, args.len()) {
            ("path", 1) => GeneratorSpec::Path(count(0)?),
            ("ring", 1) => GeneratorSpec::Ring(count(0)?),
            ("star", 1) => GeneratorSpec::Star(count(0)?),
            ("grid", 1) => {
                let (r, c) = args[0].split_once('x').ok_or_else(bad)?;
                GeneratorSpec::Grid {
                    rows: r.parse().map_err(|_| bad())?,
                    cols: c.parse().map_err(|_| bad())?,
                }
            }
            ("gnp", 2) => GeneratorSpec::Gnp {
                n: count(0)?,
                p: args[1].parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorSpec::Path(n) => write!(f, "path:{n}"),
            GeneratorSpec::Ring(n) => write!(f, "ring:{n}"),
            GeneratorSpec::Star(n) => write!(f, "star:{n}"),
            GeneratorSpec::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}"),
            GeneratorSpec::Gnp { n, p } => write!(f, "gnp:{n}:{p}"),
        }
    }
}

/// All connected graphs on `n` nodes, one representative per isomorphism
/// class. Brute force over edge subsets and vertex permutations, so only
/// meant for `n <= 5`.
pub fn connected_graphs_up_to_isomorphism(n: usize) -> Vec<Topology> {
    assert!((2..=5).contains(&n), "isomorphism enumeration is limited to 2..=5 nodes");
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect();
    let perms = permutations(n);
    let mut index = vec![vec![0usize; n]; n];
    for (i, &(u, v)) in pairs.iter().enumerate() {
        index[u][v] = i;
        index[v][u] = i;
    }
    let pair_index = |u: usize, v: usize| index[u][v];
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << pairs.len()) {
        let canonical = perms
            .iter()
            .map(|perm| {
                pairs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .fold(0u32, |acc, (_, &(u, v))| acc | (1 << pair_index(perm[u], perm[v])))
            })
            .min()
            .expect("at least one permutation");
        if canonical != mask {
            continue;
        }
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &e)| e)
            .collect();
        if let Ok(topo) = Topology::from_edges(n, &edges) {
            out.push(topo);
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn neighbors_in_canonical_order() {
        // path 1-2-3 relabelled 0-1-2
        let p = Topology::generate(&GeneratorSpec::Path(3), 0).unwrap();
        assert_eq!(p.neighbors(NodeId(1)), ids(&[0, 2]).as_slice());
        assert_eq!(p.neighbors(NodeId(2)), ids(&[1]).as_slice());
        let ring = Topology::generate(&GeneratorSpec::Ring(4), 0).unwrap();
        assert_eq!(ring.neighbors(NodeId(0)), ids(&[1, 3]).as_slice());
        assert!(p.try_neighbors(NodeId(3)).is_err());
    }

    #[test]
    fn cyclic_successor_scans_after_then_wraps() {
        // v = 0 with neighbors [a, b, c] = [1, 2, 3]
        let star = Topology::generate(&GeneratorSpec::Star(4), 0).unwrap();
        let v = NodeId(0);
        let (a, b, c) = (NodeId(1), NodeId(2), NodeId(3));
        assert_eq!(star.cyclic_successor(v, a, |w| w == b || w == c).unwrap(), Some(b));
        assert_eq!(star.cyclic_successor(v, c, |w| w == a).unwrap(), Some(a));
        assert_eq!(star.cyclic_successor(v, b, |_| false).unwrap(), None);
        // `after` itself is the last candidate
        assert_eq!(star.cyclic_successor(v, b, |w| w == b).unwrap(), Some(b));
        assert!(star.cyclic_successor(v, NodeId(0), |_| true).is_err());
    }

    #[test]
    fn cyclic_successor_visits_each_neighbor_once() {
        let k5 = Topology::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4), (1, 2)]).unwrap();
        for &after in k5.neighbors(NodeId(0)) {
            let mut visited = Vec::new();
            k5.cyclic_successor(NodeId(0), after, |w| {
                visited.push(w);
                false
            })
            .unwrap();
            assert_eq!(visited.len(), k5.degree(NodeId(0)));
            assert_eq!(visited.last(), Some(&after));
            let mut sorted = visited.clone();
            sorted.sort();
            assert_eq!(sorted, k5.neighbors(NodeId(0)));
        }
    }

    #[test]
    fn distances() {
        let p4 = Topology::generate(&GeneratorSpec::Path(4), 0).unwrap();
        assert_eq!(p4.distance(NodeId(0), NodeId(3)), 3);
        assert_eq!(p4.distance(NodeId(1), NodeId(1)), 0);
        let ring = Topology::generate(&GeneratorSpec::Ring(4), 0).unwrap();
        assert_eq!(ring.distance(NodeId(0), NodeId(2)), 2);
    }

    #[test]
    fn generators() {
        let p4 = Topology::generate(&GeneratorSpec::Path(4), 0).unwrap();
        assert_eq!(p4.edges(), vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2)), (NodeId(2), NodeId(3))]);
        let tri = Topology::generate(&GeneratorSpec::Ring(3), 0).unwrap();
        assert_eq!(tri.edges().len(), 3);
        assert!(tri.nodes().all(|v| tri.degree(v) == 2));
        let grid = Topology::generate(&GeneratorSpec::Grid { rows: 3, cols: 2 }, 0).unwrap();
        assert_eq!(grid.node_count(), 6);
        assert_eq!(grid.edges().len(), 7);
        let gnp = GeneratorSpec::Gnp { n: 8, p: 0.4 };
        assert_eq!(Topology::generate(&gnp, 7).unwrap(), Topology::generate(&gnp, 7).unwrap());
    }

    #[test]
    fn generator_errors() {
        assert!(Topology::generate(&GeneratorSpec::Path(1), 0).is_err());
        assert!(Topology::generate(&GeneratorSpec::Ring(2), 0).is_err());
        assert!(Topology::generate(&GeneratorSpec::Gnp { n: 1, p: 0.5 }, 0).is_err());
        assert!("cube:3".parse::<GeneratorSpec>().is_err());
        assert_eq!("grid:3x2".parse::<GeneratorSpec>().unwrap(), GeneratorSpec::Grid { rows: 3, cols: 2 });
        assert_eq!("gnp:8:0.4".parse::<GeneratorSpec>().unwrap(), GeneratorSpec::Gnp { n: 8, p: 0.4 });
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert!(Topology::from_edges(3, &[(0, 1)]).is_err());
        assert!(Topology::from_edges(2, &[(0, 0), (0, 1)]).is_err());
        assert!(Topology::from_edges(2, &[(0, 1), (1, 0)]).is_err());
        assert!(Topology::from_edges(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn edge_list_format() {
        let topo = Topology::parse("# triangle plus tail\n4\n0 1\n1 2\n2 0\n2 3\n").unwrap();
        assert_eq!(topo.neighbors(NodeId(2)), ids(&[0, 1, 3]).as_slice());
        assert_eq!(Topology::parse(&topo.to_edge_list()).unwrap(), topo);
        assert!(Topology::parse("3\n0 1\n").is_err());
        assert!(Topology::parse("2\n0 x\n").is_err());
        assert!(Topology::parse("").is_err());
    }

    #[test]
    fn isomorphism_class_counts() {
        // OEIS A001349: connected graphs on n unlabeled nodes
        let counts: Vec<usize> = (2..=5).map(|n| connected_graphs_up_to_isomorphism(n).len()).collect();
        assert_eq!(counts, vec![1, 2, 6, 21]);
    }
}
