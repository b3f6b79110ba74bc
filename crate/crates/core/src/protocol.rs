//! The matching state machine: per-processor variables, the five status
//! predicates, and the three guarded rules.
//!
//! Every processor `v` owns `pref` (a neighbor or null) and `prev_pref` (the
//! last neighbor it gave up on). Guards and actions read only the `pref` of
//! `v` and its neighbors; `prev_pref` is private state that steers the cyclic
//! scan for the next partner.
//!
//! All functions here are pure in `(Topology, Configuration)`. Byzantine
//! status is irrelevant to predicate evaluation.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessorState {
    pub pref: Option<NodeId>,
    pub prev_pref: NodeId,
}

impl ProcessorState {
    pub fn new(pref: Option<NodeId>, prev_pref: NodeId) -> Self {
        ProcessorState { pref, prev_pref }
    }

    /// `pref ∈ N_v ∪ {null}` and `prev_pref ∈ N_v`.
    pub fn is_valid_for(&self, topo: &Topology, v: NodeId) -> bool {
        topo.contains(v)
            && self.pref.is_none_or(|u| topo.are_adjacent(v, u))
            && topo.are_adjacent(v, self.prev_pref)
    }

    /// Index of this state within [`state_domain`] for `v`.
    fn domain_index(&self, topo: &Topology, v: NodeId) -> usize {
        let deg = topo.degree(v);
        let pref_idx = match self.pref {
            None => 0,
            Some(u) => topo.neighbor_position(v, u).expect("pref is a neighbor") + 1,
        };
        let prev_idx = topo.neighbor_position(v, self.prev_pref).expect("prev_pref is a neighbor");
        pref_idx * deg + prev_idx
    }

    fn from_domain_index(topo: &Topology, v: NodeId, idx: usize) -> Self {
        let nbrs = topo.neighbors(v);
        let deg = nbrs.len();
        let pref = match idx / deg {
            0 => None,
            k => Some(nbrs[k - 1]),
        };
        ProcessorState::new(pref, nbrs[idx % deg])
    }
}

/// Number of in-domain states of `v`: `|N_v ∪ {null}| · |N_v|`.
pub fn domain_size(topo: &Topology, v: NodeId) -> usize {
    let deg = topo.degree(v);
    (deg + 1) * deg
}

/// Every in-domain state of `v`, null preference first, then neighbors in
/// cyclic order.
pub fn state_domain(topo: &Topology, v: NodeId) -> Vec<ProcessorState> {
    (0..domain_size(topo, v))
        .map(|i| ProcessorState::from_domain_index(topo, v, i))
        .collect()
}

/// Global state: one [`ProcessorState`] per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    states: Vec<ProcessorState>,
}

impl Configuration {
    pub fn new(topo: &Topology, states: Vec<ProcessorState>) -> Result<Self> {
        let cfg = Configuration { states };
        cfg.validate(topo)?;
        Ok(cfg)
    }

    /// Builds a configuration from a `pref` vector, using the first neighbor
    /// of each node as its `prev_pref`.
    pub fn from_prefs(topo: &Topology, prefs: &[Option<usize>]) -> Result<Self> {
        if prefs.len() != topo.node_count() {
            return Err(Error::Usage(format!("expected {} prefs, got {}", topo.node_count(), prefs.len())));
        }
        let states = topo
            .nodes()
            .zip(prefs)
            .map(|(v, p)| ProcessorState::new(p.map(NodeId::from), topo.neighbors(v)[0]))
            .collect();
        Configuration::new(topo, states)
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.states.len() != topo.node_count() {
            return Err(Error::Config(format!(
                "configuration covers {} nodes, topology has {}",
                self.states.len(),
                topo.node_count()
            )));
        }
        for (v, st) in topo.nodes().zip(&self.states) {
            if !st.is_valid_for(topo, v) {
                return Err(Error::Config(format!("state of node {v} out of domain: {}", format_state(v, st))));
            }
        }
        Ok(())
    }

    /// Every node with `pref = null`, `prev_pref` = first neighbor.
    pub fn all_null(topo: &Topology) -> Self {
        Configuration {
            states: topo.nodes().map(|v| ProcessorState::new(None, topo.neighbors(v)[0])).collect(),
        }
    }

    /// Uniform draw over all in-domain configurations.
    pub fn random<R: Rng + ?Sized>(topo: &Topology, rng: &mut R) -> Self {
        Configuration {
            states: topo
                .nodes()
                .map(|v| ProcessorState::from_domain_index(topo, v, rng.gen_range(0..domain_size(topo, v))))
                .collect(),
        }
    }

    #[inline]
    pub fn state(&self, v: NodeId) -> &ProcessorState {
        &self.states[v.index()]
    }

    #[inline]
    pub fn pref(&self, v: NodeId) -> Option<NodeId> {
        self.states[v.index()].pref
    }

    pub fn set(&mut self, v: NodeId, state: ProcessorState) {
        self.states[v.index()] = state;
    }

    pub fn states(&self) -> &[ProcessorState] {
        &self.states
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    /// Total number of in-domain configurations, `None` on `u64` overflow.
    pub fn count(topo: &Topology) -> Option<u64> {
        topo.nodes()
            .try_fold(1u64, |acc, v| acc.checked_mul(domain_size(topo, v) as u64))
    }

    /// Mixed-radix index of this configuration, node 0 least significant.
    pub fn index(&self, topo: &Topology) -> u64 {
        topo.nodes().rev().fold(0u64, |acc, v| {
            acc * domain_size(topo, v) as u64 + self.state(v).domain_index(topo, v) as u64
        })
    }

    pub fn from_index(topo: &Topology, mut index: u64) -> Self {
        let states = topo
            .nodes()
            .map(|v| {
                let size = domain_size(topo, v) as u64;
                let digit = (index % size) as usize;
                index /= size;
                ProcessorState::from_domain_index(topo, v, digit)
            })
            .collect();
        Configuration { states }
    }

    /// Iterates over every in-domain configuration in index order.
    pub fn enumerate(topo: &Topology) -> impl Iterator<Item = Configuration> + '_ {
        let total = Configuration::count(topo).expect("configuration count fits in u64");
        (0..total).map(move |i| Configuration::from_index(topo, i))
    }

    /// Text encoding: one `id pref prev_pref` line per node, `-` for null.
    pub fn to_lines(&self) -> Vec<String> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, st)| format_state(NodeId::from(i), st))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in self.to_lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Parses the text encoding; every node must appear exactly once.
    pub fn parse(topo: &Topology, text: &str) -> Result<Self> {
        let mut states: Vec<Option<ProcessorState>> = vec![None; topo.node_count()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (v, st) = parse_state_line(line).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            let slot = states
                .get_mut(v.index())
                .ok_or_else(|| Error::Config(format!("line {}: node {v} out of range", lineno + 1)))?;
            if slot.replace(st).is_some() {
                return Err(Error::Config(format!("line {}: node {v} listed twice", lineno + 1)));
            }
        }
        let states = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Config(format!("node {i} missing from configuration"))))
            .collect::<Result<Vec<_>>>()?;
        Configuration::new(topo, states)
    }
}

pub fn format_state(v: NodeId, st: &ProcessorState) -> String {
    match st.pref {
        Some(p) => format!("{v} {p} {}", st.prev_pref),
        None => format!("{v} - {}", st.prev_pref),
    }
}

/// Parses one `id pref prev_pref` line. Domain checks are left to the caller.
pub fn parse_state_line(line: &str) -> std::result::Result<(NodeId, ProcessorState), String> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let [id, pref, prev] = toks.as_slice() else {
        return Err(format!("expected `id pref prev_pref`, got {line:?}"));
    };
    let node = |t: &str| t.parse::<NodeId>().map_err(|_| format!("bad node id {t:?}"));
    let pref = if *pref == "-" { None } else { Some(node(pref)?) };
    Ok((node(id)?, ProcessorState::new(pref, node(prev)?)))
}

/// Local status of a processor. Exactly one holds in any configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    /// Points at a neighbor whose `pref` is null.
    Proposing,
    /// Points at a neighbor that points back.
    Married,
    /// Points at a neighbor that points at someone else.
    Doomed,
    /// Null `pref` and every neighbor is married.
    Dead,
    /// Null `pref` and some neighbor is not married.
    Single,
}

impl Status {
    pub const ALL: [Status; 5] = [Status::Proposing, Status::Married, Status::Doomed, Status::Dead, Status::Single];

    pub fn short(self) -> char {
        match self {
            Status::Proposing => 'P',
            Status::Married => 'M',
            Status::Doomed => 'C',
            Status::Dead => 'D',
            Status::Single => 'S',
        }
    }
}

fn is_married(cfg: &Configuration, v: NodeId) -> bool {
    cfg.pref(v).is_some_and(|u| cfg.pref(u) == Some(v))
}

pub fn classify(topo: &Topology, cfg: &Configuration, v: NodeId) -> Status {
    match cfg.pref(v) {
        Some(u) => match cfg.pref(u) {
            None => Status::Proposing,
            Some(w) if w == v => Status::Married,
            Some(_) => Status::Doomed,
        },
        None => {
            if topo.neighbors(v).iter().all(|&u| is_married(cfg, u)) {
                Status::Dead
            } else {
                Status::Single
            }
        }
    }
}

pub fn classify_all(topo: &Topology, cfg: &Configuration) -> Vec<Status> {
    topo.nodes().map(|v| classify(topo, cfg, v)).collect()
}

/// Local legitimacy: married or dead.
pub fn spec(topo: &Topology, cfg: &Configuration, v: NodeId) -> bool {
    matches!(classify(topo, cfg, v), Status::Married | Status::Dead)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    /// Accept a proposal: null `pref` and some neighbor points here.
    #[serde(rename = "M")]
    Marry,
    /// Propose: null `pref`, nobody points here, some neighbor is free.
    #[serde(rename = "S")]
    Seduce,
    /// Give up: the chosen neighbor points at a third node.
    #[serde(rename = "A")]
    Abandon,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Marry => "M",
            Rule::Seduce => "S",
            Rule::Abandon => "A",
        })
    }
}

/// Rule set executed by correct processors.
///
/// `FrozenMemory` and `NoAbandon` are deliberately broken mutants kept as
/// negative controls for the checkers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    Ssmm,
    /// Rule A clears `pref` but never records it in `prev_pref`.
    FrozenMemory,
    /// Rule A is never enabled.
    NoAbandon,
}

impl Protocol {
    pub fn enabled_rule(self, topo: &Topology, cfg: &Configuration, v: NodeId) -> Option<Rule> {
        match cfg.pref(v) {
            None => {
                let nbrs = topo.neighbors(v);
                if nbrs.iter().any(|&u| cfg.pref(u) == Some(v)) {
                    Some(Rule::Marry)
                } else if nbrs.iter().any(|&u| cfg.pref(u).is_none()) {
                    Some(Rule::Seduce)
                } else {
                    None
                }
            }
            Some(u) => match cfg.pref(u) {
                Some(w) if w != v && self != Protocol::NoAbandon => Some(Rule::Abandon),
                _ => None,
            },
        }
    }

    /// New state of `v` after firing `rule`, all reads from `cfg`.
    ///
    /// Panics when `rule` is not the enabled rule of `v`.
    pub fn apply_rule(self, topo: &Topology, cfg: &Configuration, v: NodeId, rule: Rule) -> ProcessorState {
        assert_eq!(
            self.enabled_rule(topo, cfg, v),
            Some(rule),
            "rule {rule} applied to node {v} while not enabled"
        );
        let st = *cfg.state(v);
        match rule {
            Rule::Marry => ProcessorState::new(Some(next_partner(topo, cfg, v, Some(v))), st.prev_pref),
            Rule::Seduce => ProcessorState::new(Some(next_partner(topo, cfg, v, None)), st.prev_pref),
            Rule::Abandon => match self {
                Protocol::FrozenMemory => ProcessorState::new(None, st.prev_pref),
                _ => ProcessorState::new(None, st.pref.expect("abandon requires a pref")),
            },
        }
    }
}

pub fn enabled_rule(topo: &Topology, cfg: &Configuration, v: NodeId) -> Option<Rule> {
    Protocol::Ssmm.enabled_rule(topo, cfg, v)
}

pub fn apply_rule(topo: &Topology, cfg: &Configuration, v: NodeId, rule: Rule) -> ProcessorState {
    Protocol::Ssmm.apply_rule(topo, cfg, v, rule)
}

/// First neighbor after `prev_pref` (cyclically, `prev_pref` last) whose
/// `pref` equals `target`.
///
/// Panics when no neighbor qualifies; the M and S guards rule that out.
pub fn next_partner(topo: &Topology, cfg: &Configuration, v: NodeId, target: Option<NodeId>) -> NodeId {
    topo.cyclic_successor(v, cfg.state(v).prev_pref, |w| cfg.pref(w) == target)
        .expect("prev_pref is a neighbor")
        .unwrap_or_else(|| panic!("no neighbor of {v} has pref {target:?}"))
}

/// Composite atomic step: each selected node fires its enabled rule and each
/// Byzantine write lands, all computed from `cfg`.
pub fn apply_step(
    protocol: Protocol,
    topo: &Topology,
    cfg: &Configuration,
    fired: &[(NodeId, Rule)],
    writes: &BTreeMap<NodeId, ProcessorState>,
) -> Configuration {
    let mut next = cfg.clone();
    for &(v, rule) in fired {
        next.set(v, protocol.apply_rule(topo, cfg, v, rule));
    }
    for (&b, &st) in writes {
        next.set(b, st);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::GeneratorSpec;

    fn path(n: usize) -> Topology {
        Topology::generate(&GeneratorSpec::Path(n), 0).unwrap()
    }

    fn cfg(topo: &Topology, prefs: &[Option<usize>]) -> Configuration {
        Configuration::from_prefs(topo, prefs).unwrap()
    }

    const N: Option<usize> = None;

    #[test]
    fn classify_examples() {
        // path 1-2-3 relabelled 0-1-2
        let p3 = path(3);
        let c = cfg(&p3, &[Some(1), Some(0), N]);
        assert_eq!(classify_all(&p3, &c), vec![Status::Married, Status::Married, Status::Dead]);
        let c = cfg(&p3, &[Some(1), N, N]);
        assert_eq!(classify_all(&p3, &c), vec![Status::Proposing, Status::Single, Status::Single]);
        let c = cfg(&p3, &[Some(1), Some(2), Some(1)]);
        assert_eq!(classify_all(&p3, &c), vec![Status::Doomed, Status::Married, Status::Married]);
    }

    #[test]
    fn spec_examples() {
        let p3 = path(3);
        let c = cfg(&p3, &[Some(1), Some(0), N]);
        assert!(spec(&p3, &c, NodeId(0)));
        assert!(spec(&p3, &c, NodeId(2)));
        let c = cfg(&p3, &[Some(1), N, N]);
        assert!(!spec(&p3, &c, NodeId(1)));
    }

    #[test]
    fn enabled_rule_examples() {
        let e = path(2);
        assert_eq!(enabled_rule(&e, &cfg(&e, &[Some(1), N]), NodeId(1)), Some(Rule::Marry));
        let c = cfg(&e, &[N, N]);
        assert_eq!(enabled_rule(&e, &c, NodeId(0)), Some(Rule::Seduce));
        assert_eq!(enabled_rule(&e, &c, NodeId(1)), Some(Rule::Seduce));
        let p3 = path(3);
        let c = cfg(&p3, &[Some(1), Some(2), Some(1)]);
        assert_eq!(enabled_rule(&p3, &c, NodeId(0)), Some(Rule::Abandon));
        assert_eq!(enabled_rule(&p3, &c, NodeId(1)), None);
    }

    #[test]
    fn apply_marry_on_single_edge() {
        let e = path(2);
        let c = cfg(&e, &[Some(1), N]);
        let st = apply_rule(&e, &c, NodeId(1), Rule::Marry);
        assert_eq!(st, ProcessorState::new(Some(NodeId(0)), NodeId(0)));
    }

    /// Reference scan: rotate the neighbor list so it starts right after
    /// `prev` and take the first match.
    fn rotated_first(nbrs: &[NodeId], prev: NodeId, accept: impl Fn(NodeId) -> bool) -> Option<NodeId> {
        let k = nbrs.iter().position(|&u| u == prev).unwrap();
        nbrs[k + 1..].iter().chain(&nbrs[..=k]).copied().find(|&u| accept(u))
    }

    #[test]
    fn apply_marry_on_star_uses_cyclic_order() {
        // center 0, leaves 1,2,3; leaves 1 and 3 propose to 0; prev_pref_0 = 1
        let star = Topology::generate(&GeneratorSpec::Star(4), 0).unwrap();
        let mut c = cfg(&star, &[N, Some(0), N, Some(0)]);
        c.set(NodeId(0), ProcessorState::new(None, NodeId(1)));
        let expected = rotated_first(star.neighbors(NodeId(0)), NodeId(1), |u| c.pref(u) == Some(NodeId(0)));
        assert_eq!(expected, Some(NodeId(3)));
        let st = apply_rule(&star, &c, NodeId(0), Rule::Marry);
        assert_eq!(st, ProcessorState::new(Some(NodeId(3)), NodeId(1)));
    }

    #[test]
    fn apply_abandon_records_previous_pref() {
        let p3 = path(3);
        let c = cfg(&p3, &[Some(1), Some(2), Some(1)]);
        let st = apply_rule(&p3, &c, NodeId(0), Rule::Abandon);
        assert_eq!(st, ProcessorState::new(None, NodeId(1)));
        let frozen = Protocol::FrozenMemory.apply_rule(&p3, &c, NodeId(0), Rule::Abandon);
        assert_eq!(frozen, ProcessorState::new(None, c.state(NodeId(0)).prev_pref));
        assert_eq!(Protocol::NoAbandon.enabled_rule(&p3, &c, NodeId(0)), None);
    }

    #[test]
    #[should_panic(expected = "not enabled")]
    fn apply_disabled_rule_panics() {
        let p3 = path(3);
        let c = cfg(&p3, &[Some(1), Some(0), N]);
        apply_rule(&p3, &c, NodeId(0), Rule::Abandon);
    }

    #[test]
    fn next_partner_examples() {
        // v = 0 with neighbors [a, b, c] = [1, 2, 3]
        let star = Topology::generate(&GeneratorSpec::Star(4), 0).unwrap();
        let v = NodeId(0);
        let mut c = cfg(&star, &[N, N, N, N]);
        c.set(v, ProcessorState::new(None, NodeId(1)));
        assert_eq!(next_partner(&star, &c, v, None), NodeId(2));

        let mut c = cfg(&star, &[N, Some(0), N, N]);
        c.set(v, ProcessorState::new(None, NodeId(3)));
        assert_eq!(next_partner(&star, &c, v, Some(v)), NodeId(1));

        // neighbors [a, b] = [1, 2], both propose, prev = a: b is preferred
        let p3 = path(3);
        let mut c = cfg(&p3, &[Some(1), N, Some(1)]);
        c.set(NodeId(1), ProcessorState::new(None, NodeId(0)));
        assert_eq!(next_partner(&p3, &c, NodeId(1), Some(NodeId(1))), NodeId(2));
    }

    #[test]
    fn text_encoding() {
        let p3 = path(3);
        let c = cfg(&p3, &[Some(1), N, Some(1)]);
        assert_eq!(c.to_text(), "0 1 1\n1 - 0\n2 1 1\n");
        assert_eq!(Configuration::parse(&p3, &c.to_text()).unwrap(), c);
        assert!(Configuration::parse(&p3, "0 1 1\n1 - 0\n").is_err());
        assert!(Configuration::parse(&p3, "0 2 1\n1 - 0\n2 1 1\n").is_err());
        assert!(Configuration::parse(&p3, "0 1 1\n0 1 1\n1 - 0\n2 1 1\n").is_err());
    }

    #[test]
    fn index_bijection() {
        let p4 = path(4);
        assert_eq!(Configuration::count(&p4), Some(144));
        for (i, c) in Configuration::enumerate(&p4).enumerate() {
            assert_eq!(c.index(&p4), i as u64);
            c.validate(&p4).unwrap();
        }
    }
}
