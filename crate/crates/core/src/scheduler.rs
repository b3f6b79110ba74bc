//! Daemons: who moves at each step.
//!
//! Every selection is a nonempty independent set of the candidates (no two
//! neighbors move together). Strong fairness is enforced on finite runs by a
//! [`FairnessLedger`]: nodes that have waited long enough get priority, which
//! keeps every wait at or below the cap `K`. A starved node can only be
//! overtaken by a competitor that has waited at least as long, and each such
//! competitor is reset once served, so the priority window needs one slot per
//! possible competitor: the maximum degree for the random daemon, `n - 1` for
//! the central ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{Configuration, Protocol, Rule, Status};
use crate::topology::{NodeId, Topology};

/// Largest candidate set [`all_selections`] will enumerate.
pub const MAX_EXHAUSTIVE_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DaemonKind {
    /// Random maximal independent set of the candidates.
    RandomFair { seed: u64 },
    /// One node at a time, rotating through ids.
    RoundRobin,
    /// One node at a time, picking the move that leaves the most nodes
    /// unsatisfied.
    AdversarialGreedy { seed: u64 },
    /// Every legal selection; only meaningful for the explorer.
    Exhaustive,
}

/// A node the daemon may activate. `rule` is `None` for a Byzantine node
/// when Byzantine writes are scheduled like protocol moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub node: NodeId,
    pub rule: Option<Rule>,
}

/// Consecutive steps each node has been a candidate without being selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FairnessLedger {
    waiting: Vec<usize>,
}

impl FairnessLedger {
    pub fn new(n: usize) -> Self {
        FairnessLedger { waiting: vec![0; n] }
    }

    pub fn waiting(&self, v: NodeId) -> usize {
        self.waiting[v.index()]
    }

    pub fn max_waiting(&self) -> usize {
        self.waiting.iter().copied().max().unwrap_or(0)
    }

    pub fn update(&mut self, candidates: &[Candidate], selected: &[NodeId]) {
        let mut next = vec![0; self.waiting.len()];
        for c in candidates {
            if !selected.contains(&c.node) {
                next[c.node.index()] = self.waiting[c.node.index()] + 1;
            }
        }
        self.waiting = next;
    }
}

pub fn is_independent(topo: &Topology, nodes: &[NodeId]) -> bool {
    nodes
        .iter()
        .enumerate()
        .all(|(i, &u)| nodes[i + 1..].iter().all(|&v| u != v && !topo.are_adjacent(u, v)))
}

/// All nonempty independent subsets of `candidates`, each sorted by id,
/// ordered by size then lexicographically.
pub fn all_selections(topo: &Topology, candidates: &[NodeId]) -> Result<Vec<Vec<NodeId>>> {
    if candidates.len() > MAX_EXHAUSTIVE_CANDIDATES {
        return Err(Error::Usage(format!(
            "{} candidates exceed the exhaustive selection limit of {MAX_EXHAUSTIVE_CANDIDATES}",
            candidates.len()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out: Vec<Vec<NodeId>> = vec![Vec::new()];
    for &v in &sorted {
        let extended: Vec<Vec<NodeId>> = out
            .iter()
            .filter(|s| s.iter().all(|&u| !topo.are_adjacent(u, v)))
            .map(|s| {
                let mut t = s.clone();
                t.push(v);
                t
            })
            .collect();
        out.extend(extended);
    }
    out.retain(|s| !s.is_empty());
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

pub struct Daemon {
    kind: DaemonKind,
    fair_cap: usize,
    priority_threshold: usize,
    rng: ChaCha8Rng,
    cursor: usize,
    ledger: FairnessLedger,
}

impl Daemon {
    /// `fair_cap` must cover the number of possible competitors of a node
    /// (see the module docs).
    pub fn new(kind: DaemonKind, topo: &Topology, fair_cap: usize) -> Result<Self> {
        let seed = match kind {
            DaemonKind::RandomFair { seed } | DaemonKind::AdversarialGreedy { seed } => seed,
            DaemonKind::RoundRobin => 0,
            DaemonKind::Exhaustive => {
                return Err(Error::Config(
                    "the exhaustive daemon drives the explorer and cannot run a simulation".into(),
                ))
            }
        };
        let competitors = match kind {
            DaemonKind::RandomFair { .. } => topo.max_degree(),
            _ => topo.node_count() - 1,
        };
        if fair_cap < competitors {
            return Err(Error::Config(format!(
                "fairness cap {fair_cap} is below the {competitors} competitors a node can have under {kind:?}"
            )));
        }
        Ok(Daemon {
            kind,
            fair_cap,
            priority_threshold: fair_cap - competitors,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: 0,
            ledger: FairnessLedger::new(topo.node_count()),
        })
    }

    pub fn kind(&self) -> DaemonKind {
        self.kind
    }

    pub fn fair_cap(&self) -> usize {
        self.fair_cap
    }

    pub fn ledger(&self) -> &FairnessLedger {
        &self.ledger
    }

    /// Picks the nodes that move this step and updates the fairness ledger.
    /// The result is sorted by id.
    pub fn select(
        &mut self,
        protocol: Protocol,
        topo: &Topology,
        cfg: &Configuration,
        candidates: &[Candidate],
    ) -> Vec<NodeId> {
        if candidates.is_empty() {
            self.ledger.update(candidates, &[]);
            return Vec::new();
        }
        let starved: Vec<Candidate> = candidates
            .iter()
            .copied()
            .filter(|c| self.ledger.waiting(c.node) >= self.priority_threshold)
            .collect();
        let mut selected = if !starved.is_empty() {
            self.fair_selection(topo, candidates, starved)
        } else {
            match self.kind {
                DaemonKind::RandomFair { .. } => {
                    let mut order: Vec<NodeId> = candidates.iter().map(|c| c.node).collect();
                    order.shuffle(&mut self.rng);
                    greedy_independent(topo, &order)
                }
                DaemonKind::RoundRobin => vec![self.round_robin(topo, candidates)],
                DaemonKind::AdversarialGreedy { .. } => vec![self.adversarial(protocol, topo, cfg, candidates)],
                DaemonKind::Exhaustive => unreachable!("rejected in Daemon::new"),
            }
        };
        selected.sort_unstable();
        self.ledger.update(candidates, &selected);
        selected
    }

    /// Starved nodes first, longest wait first (random tie-break), then the
    /// kind's ordinary policy fills the rest. Central daemons stop after the
    /// first pick.
    fn fair_selection(&mut self, topo: &Topology, candidates: &[Candidate], mut starved: Vec<Candidate>) -> Vec<NodeId> {
        starved.shuffle(&mut self.rng);
        starved.sort_by_key(|c| std::cmp::Reverse(self.ledger.waiting(c.node)));
        match self.kind {
            DaemonKind::RandomFair { .. } => {
                let mut rest: Vec<NodeId> = candidates
                    .iter()
                    .map(|c| c.node)
                    .filter(|v| !starved.iter().any(|s| s.node == *v))
                    .collect();
                rest.shuffle(&mut self.rng);
                let order: Vec<NodeId> = starved.iter().map(|c| c.node).chain(rest).collect();
                greedy_independent(topo, &order)
            }
            _ => {
                let pick = starved[0].node;
                self.cursor = pick.index() + 1;
                vec![pick]
            }
        }
    }

    fn round_robin(&mut self, topo: &Topology, candidates: &[Candidate]) -> NodeId {
        let n = topo.node_count();
        let pick = (0..n)
            .map(|k| NodeId::from((self.cursor + k) % n))
            .find(|v| candidates.iter().any(|c| c.node == *v))
            .expect("candidates nonempty");
        self.cursor = pick.index() + 1;
        pick
    }

    fn adversarial(&mut self, protocol: Protocol, topo: &Topology, cfg: &Configuration, candidates: &[Candidate]) -> NodeId {
        let mut scored: Vec<(usize, NodeId)> = candidates
            .iter()
            .map(|c| {
                let score = match c.rule {
                    Some(rule) => {
                        let mut next = cfg.clone();
                        next.set(c.node, protocol.apply_rule(topo, cfg, c.node, rule));
                        unsatisfied_weight(topo, &next)
                    }
                    None => 0,
                };
                (score, c.node)
            })
            .collect();
        let best = scored.iter().map(|s| s.0).max().expect("candidates nonempty");
        scored.retain(|s| s.0 == best);
        scored[self.rng.gen_range(0..scored.len())].1
    }
}

fn greedy_independent(topo: &Topology, order: &[NodeId]) -> Vec<NodeId> {
    let mut chosen: Vec<NodeId> = Vec::new();
    for &v in order {
        if chosen.iter().all(|&u| !topo.are_adjacent(u, v)) {
            chosen.push(v);
        }
    }
    chosen
}

fn unsatisfied_weight(topo: &Topology, cfg: &Configuration) -> usize {
    topo.nodes()
        .map(|v| match crate::protocol::classify(topo, cfg, v) {
            Status::Married | Status::Dead => 0,
            Status::Proposing => 1,
            Status::Doomed => 2,
            Status::Single => 3,
        })
        .sum()
}

/// Default fairness cap `4·n`.
pub fn default_fair_cap(topo: &Topology) -> usize {
    4 * topo.node_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::enabled_rule;
    use crate::topology::GeneratorSpec;

    fn path(n: usize) -> Topology {
        Topology::generate(&GeneratorSpec::Path(n), 0).unwrap()
    }

    fn cands(nodes: &[u32]) -> Vec<Candidate> {
        nodes.iter().map(|&v| Candidate { node: NodeId(v), rule: Some(Rule::Seduce) }).collect()
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn selection_on_an_edge_is_a_single_node() {
        let e = path(2);
        let cfg = Configuration::all_null(&e);
        for seed in 0..20 {
            let mut d = Daemon::new(DaemonKind::RandomFair { seed }, &e, 8).unwrap();
            let sel = d.select(Protocol::Ssmm, &e, &cfg, &cands(&[0, 1]));
            assert_eq!(sel.len(), 1);
        }
    }

    #[test]
    fn non_adjacent_pair_may_move_together() {
        let p3 = path(3);
        let cfg = Configuration::all_null(&p3);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..20 {
            let mut d = Daemon::new(DaemonKind::RandomFair { seed }, &p3, 12).unwrap();
            seen.insert(d.select(Protocol::Ssmm, &p3, &cfg, &cands(&[0, 2])));
        }
        // random maximal selections always take both
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![ids(&[0, 2])]);
    }

    #[test]
    fn empty_candidates_give_empty_selection() {
        let p3 = path(3);
        let cfg = Configuration::all_null(&p3);
        for kind in [DaemonKind::RandomFair { seed: 1 }, DaemonKind::RoundRobin, DaemonKind::AdversarialGreedy { seed: 1 }] {
            let mut d = Daemon::new(kind, &p3, 12).unwrap();
            assert!(d.select(Protocol::Ssmm, &p3, &cfg, &[]).is_empty());
        }
    }

    #[test]
    fn all_selections_examples() {
        let e = path(2);
        assert_eq!(all_selections(&e, &ids(&[0, 1])).unwrap(), vec![ids(&[0]), ids(&[1])]);
        let p3 = path(3);
        assert_eq!(all_selections(&p3, &ids(&[0, 2])).unwrap(), vec![ids(&[0]), ids(&[2]), ids(&[0, 2])]);
        assert_eq!(all_selections(&p3, &ids(&[1])).unwrap(), vec![ids(&[1])]);
        let p10 = path(10);
        assert!(all_selections(&p10, &ids(&[0, 1, 2, 3, 4, 5, 6, 7, 8])).is_err());
    }

    #[test]
    fn all_selections_matches_powerset_filter() {
        let topo = Topology::generate(&GeneratorSpec::Gnp { n: 7, p: 0.35 }, 3).unwrap();
        let cand = ids(&[0, 2, 3, 5, 6]);
        let mut brute = Vec::new();
        for mask in 1u32..(1 << cand.len()) {
            let s: Vec<NodeId> = (0..cand.len()).filter(|i| mask & (1 << i) != 0).map(|i| cand[i]).collect();
            if is_independent(&topo, &s) {
                brute.push(s);
            }
        }
        brute.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        assert_eq!(all_selections(&topo, &cand).unwrap(), brute);
    }

    #[test]
    fn rejects_exhaustive_and_small_caps() {
        let star = Topology::generate(&GeneratorSpec::Star(5), 0).unwrap();
        assert!(Daemon::new(DaemonKind::Exhaustive, &star, 20).is_err());
        assert!(Daemon::new(DaemonKind::RoundRobin, &star, 3).is_err());
    }

    #[test]
    fn ledger_resets_on_selection_and_disable() {
        let mut l = FairnessLedger::new(3);
        l.update(&cands(&[0, 1]), &ids(&[0]));
        assert_eq!((l.waiting(NodeId(0)), l.waiting(NodeId(1))), (0, 1));
        l.update(&cands(&[0, 1]), &ids(&[0]));
        assert_eq!(l.waiting(NodeId(1)), 2);
        l.update(&cands(&[0]), &ids(&[0]));
        assert_eq!(l.waiting(NodeId(1)), 0);
    }

    /// A star whose center and leaves are permanently enabled: the center
    /// conflicts with everybody, so only the cap gets it scheduled.
    #[test]
    fn cap_bounds_waiting_under_persistent_contention() {
        let star = Topology::generate(&GeneratorSpec::Star(6), 0).unwrap();
        let cfg = Configuration::all_null(&star);
        let all = cands(&[0, 1, 2, 3, 4, 5]);
        for kind in [DaemonKind::RandomFair { seed: 9 }, DaemonKind::RoundRobin, DaemonKind::AdversarialGreedy { seed: 9 }] {
            let cap = default_fair_cap(&star);
            let mut d = Daemon::new(kind, &star, cap).unwrap();
            let mut center_moves = 0;
            for _ in 0..500 {
                let sel = d.select(Protocol::Ssmm, &star, &cfg, &all);
                assert!(is_independent(&star, &sel));
                assert!(!sel.is_empty());
                assert!(d.ledger().max_waiting() <= cap, "{kind:?}");
                center_moves += sel.contains(&NodeId(0)) as usize;
            }
            assert!(center_moves > 0);
        }
    }

    #[test]
    fn adversary_prefers_worst_outcome() {
        // edge 0-1 with 0 proposing to 1: only 1 enabled (M), so it is picked
        let e = path(2);
        let cfg = Configuration::from_prefs(&e, &[Some(1), None]).unwrap();
        let c: Vec<Candidate> = e
            .nodes()
            .filter_map(|v| enabled_rule(&e, &cfg, v).map(|r| Candidate { node: v, rule: Some(r) }))
            .collect();
        let mut d = Daemon::new(DaemonKind::AdversarialGreedy { seed: 0 }, &e, 8).unwrap();
        assert_eq!(d.select(Protocol::Ssmm, &e, &cfg, &c), ids(&[1]));
    }
}
