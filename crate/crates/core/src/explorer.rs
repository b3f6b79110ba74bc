//! Explicit-state exploration of tiny instances.
//!
//! Every in-domain configuration is a start state. From each state we add
//! one transition per legal daemon selection (every nonempty independent set
//! of enabled correct nodes) combined with every in-domain write of every
//! Byzantine node. The resulting graph is checked for closure (no transition
//! leaves the contained set) and for a structural convergence condition:
//! every terminal strongly connected component meets the contained set and
//! the contained set is reachable from every state.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{apply_step, state_domain, Configuration, ProcessorState, Protocol, Rule};
use crate::scheduler::all_selections;
use crate::topology::{NodeId, Topology};
use crate::verifier::{c_correct_set, contained};

/// Mixed-radix encoding of a configuration (see [`Configuration::index`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(pub u64);

impl StateKey {
    /// Two bytes per node: `pref` slot (0 = null, k = k-th neighbor) and
    /// `prev_pref` slot.
    pub fn to_bytes(self, topo: &Topology) -> Vec<u8> {
        let cfg = Configuration::from_index(topo, self.0);
        topo.nodes()
            .flat_map(|v| {
                let st = cfg.state(v);
                let pref = st.pref.map_or(0, |u| topo.neighbor_position(v, u).expect("in domain") + 1);
                let prev = topo.neighbor_position(v, st.prev_pref).expect("in domain");
                [pref as u8, prev as u8]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub fired: Vec<(NodeId, Rule)>,
    pub writes: Vec<(NodeId, ProcessorState)>,
    pub target: StateKey,
}

#[derive(Debug, Clone)]
pub struct TransitionGraph {
    topo: Topology,
    byzantine: BTreeSet<NodeId>,
    protocol: Protocol,
    transitions: Vec<Vec<Transition>>,
    pub contained_1: Vec<bool>,
    pub contained_2: Vec<bool>,
}

pub fn build(topo: &Topology, byzantine: &BTreeSet<NodeId>, bound: u64) -> Result<TransitionGraph> {
    build_with(Protocol::Ssmm, topo, byzantine, bound)
}

pub fn build_with(
    protocol: Protocol,
    topo: &Topology,
    byzantine: &BTreeSet<NodeId>,
    bound: u64,
) -> Result<TransitionGraph> {
    if let Some(&b) = byzantine.iter().find(|b| !topo.contains(**b)) {
        return Err(Error::Usage(format!("Byzantine node {b} out of range")));
    }
    let count = Configuration::count(topo).filter(|&c| c <= bound).ok_or_else(|| {
        let shown = Configuration::count(topo).map_or("more than 2^64".to_string(), |c| c.to_string());
        Error::Usage(format!("instance has {shown} states, above the bound of {bound}"))
    })?;
    let write_sets = byzantine_write_sets(topo, byzantine);
    let correct: Vec<NodeId> = topo.nodes().filter(|v| !byzantine.contains(v)).collect();
    let v1 = c_correct_set(topo, byzantine, 1);
    let v2 = c_correct_set(topo, byzantine, 2);

    let mut transitions = Vec::with_capacity(count as usize);
    let mut contained_1 = Vec::with_capacity(count as usize);
    let mut contained_2 = Vec::with_capacity(count as usize);
    for key in 0..count {
        let cfg = Configuration::from_index(topo, key);
        contained_1.push(contained(topo, &cfg, &v1));
        contained_2.push(contained(topo, &cfg, &v2));
        let enabled: Vec<(NodeId, Rule)> = correct
            .iter()
            .filter_map(|&v| protocol.enabled_rule(topo, &cfg, v).map(|r| (v, r)))
            .collect();
        let selections = if enabled.is_empty() {
            // Byzantine nodes may still act alone.
            if byzantine.is_empty() { Vec::new() } else { vec![Vec::new()] }
        } else {
            let nodes: Vec<NodeId> = enabled.iter().map(|e| e.0).collect();
            all_selections(topo, &nodes)?
        };
        let mut out = Vec::with_capacity(selections.len() * write_sets.len());
        for sel in &selections {
            let fired: Vec<(NodeId, Rule)> = enabled.iter().copied().filter(|(v, _)| sel.contains(v)).collect();
            for writes in &write_sets {
                let map = writes.iter().copied().collect();
                let next = apply_step(protocol, topo, &cfg, &fired, &map);
                out.push(Transition {
                    fired: fired.clone(),
                    writes: writes.clone(),
                    target: StateKey(next.index(topo)),
                });
            }
        }
        transitions.push(out);
    }
    Ok(TransitionGraph {
        topo: topo.clone(),
        byzantine: byzantine.clone(),
        protocol,
        transitions,
        contained_1,
        contained_2,
    })
}

/// Cartesian product of the in-domain states of every Byzantine node.
fn byzantine_write_sets(topo: &Topology, byzantine: &BTreeSet<NodeId>) -> Vec<Vec<(NodeId, ProcessorState)>> {
    let mut sets: Vec<Vec<(NodeId, ProcessorState)>> = vec![Vec::new()];
    for &b in byzantine {
        sets = sets
            .into_iter()
            .flat_map(|prefix| {
                state_domain(topo, b).into_iter().map(move |st| {
                    let mut w = prefix.clone();
                    w.push((b, st));
                    w
                })
            })
            .collect();
    }
    sets
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureViolation {
    pub from: StateKey,
    pub transition: usize,
    pub to: StateKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub radius: usize,
    pub holds: bool,
    pub scc_count: usize,
    pub terminal_sccs: usize,
    /// Terminal components with no contained state.
    pub terminal_sccs_outside: usize,
    /// Terminal components that mix contained and uncontained states.
    pub terminal_sccs_mixed: usize,
    /// States from which no contained state is reachable.
    pub stranded_states: u64,
}

impl TransitionGraph {
    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn byzantine(&self) -> &BTreeSet<NodeId> {
        &self.byzantine
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn state_count(&self) -> u64 {
        self.transitions.len() as u64
    }

    pub fn transition_count(&self) -> u64 {
        self.transitions.iter().map(|t| t.len() as u64).sum()
    }

    pub fn transitions(&self, key: StateKey) -> &[Transition] {
        &self.transitions[key.0 as usize]
    }

    pub fn configuration(&self, key: StateKey) -> Configuration {
        Configuration::from_index(&self.topo, key.0)
    }

    /// Containment flag per state for radius `c`.
    pub fn contained_flags(&self, c: usize) -> Vec<bool> {
        match c {
            1 => self.contained_1.clone(),
            2 => self.contained_2.clone(),
            _ => {
                let correct = c_correct_set(&self.topo, &self.byzantine, c);
                (0..self.state_count())
                    .map(|k| contained(&self.topo, &self.configuration(StateKey(k)), &correct))
                    .collect()
            }
        }
    }

    /// Distinct successors of each state.
    fn successors(&self) -> Vec<Vec<usize>> {
        self.transitions
            .iter()
            .map(|ts| {
                let set: BTreeSet<usize> = ts.iter().map(|t| t.target.0 as usize).collect();
                set.into_iter().collect()
            })
            .collect()
    }

    pub fn check_closure(&self, c: usize) -> Vec<ClosureViolation> {
        let flags = self.contained_flags(c);
        let mut out = Vec::new();
        for (from, ts) in self.transitions.iter().enumerate() {
            if !flags[from] {
                continue;
            }
            for (i, t) in ts.iter().enumerate() {
                if !flags[t.target.0 as usize] {
                    out.push(ClosureViolation { from: StateKey(from as u64), transition: i, to: t.target });
                }
            }
        }
        out
    }

    /// Strongly connected components with no edge leaving them.
    pub fn terminal_sccs(&self) -> (usize, Vec<Vec<StateKey>>) {
        let succ = self.successors();
        let mut graph: DiGraph<(), ()> = DiGraph::with_capacity(succ.len(), 0);
        for _ in 0..succ.len() {
            graph.add_node(());
        }
        for (u, vs) in succ.iter().enumerate() {
            for &v in vs {
                graph.add_edge(NodeIndex::new(u), NodeIndex::new(v), ());
            }
        }
        let sccs = tarjan_scc(&graph);
        let mut component = vec![0usize; succ.len()];
        for (i, scc) in sccs.iter().enumerate() {
            for n in scc {
                component[n.index()] = i;
            }
        }
        let terminal = sccs
            .iter()
            .enumerate()
            .filter(|(i, scc)| {
                scc.iter()
                    .all(|n| succ[n.index()].iter().all(|&s| component[s] == *i))
            })
            .map(|(_, scc)| {
                let mut keys: Vec<StateKey> = scc.iter().map(|n| StateKey(n.index() as u64)).collect();
                keys.sort();
                keys
            })
            .collect();
        (sccs.len(), terminal)
    }

    /// Necessary condition for convergence under a strongly fair daemon: no
    /// terminal component avoids the contained set, and the contained set is
    /// reachable from everywhere.
    pub fn check_convergence(&self, c: usize) -> ConvergenceVerdict {
        let flags = self.contained_flags(c);
        let (scc_count, terminal) = self.terminal_sccs();
        let mut outside = 0;
        let mut mixed = 0;
        for scc in &terminal {
            let inside = scc.iter().filter(|k| flags[k.0 as usize]).count();
            if inside == 0 {
                outside += 1;
            } else if inside < scc.len() {
                mixed += 1;
            }
        }
        let stranded = self.unreachable_from(&flags);
        ConvergenceVerdict {
            radius: c,
            holds: outside == 0 && stranded == 0,
            scc_count,
            terminal_sccs: terminal.len(),
            terminal_sccs_outside: outside,
            terminal_sccs_mixed: mixed,
            stranded_states: stranded,
        }
    }

    /// Number of states that cannot reach any flagged state.
    fn unreachable_from(&self, flags: &[bool]) -> u64 {
        let succ = self.successors();
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); succ.len()];
        for (u, vs) in succ.iter().enumerate() {
            for &v in vs {
                pred[v].push(u);
            }
        }
        let mut reach = flags.to_vec();
        let mut queue: VecDeque<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        while let Some(v) = queue.pop_front() {
            for &u in &pred[v] {
                if !reach[u] {
                    reach[u] = true;
                    queue.push_back(u);
                }
            }
        }
        reach.iter().filter(|&&r| !r).count() as u64
    }

    /// Text adjacency dump: a `state` line with the configuration, then one
    /// line per outgoing transition.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for key in 0..self.state_count() {
            let cfg = self.configuration(StateKey(key));
            let _ = writeln!(
                out,
                "state {key} [{}] c1={} c2={}",
                cfg.to_lines().join(", "),
                self.contained_1[key as usize] as u8,
                self.contained_2[key as usize] as u8
            );
            for t in self.transitions(StateKey(key)) {
                let fired: Vec<String> = t.fired.iter().map(|(v, r)| format!("{v}:{r}")).collect();
                let writes: Vec<String> =
                    t.writes.iter().map(|(b, st)| crate::protocol::format_state(*b, st)).collect();
                let _ = writeln!(out, "  -> {} fired=[{}] writes=[{}]", t.target.0, fired.join(" "), writes.join(", "));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub states: u64,
    pub transitions: u64,
    pub byzantine: Vec<NodeId>,
    pub radius: usize,
    pub closure_violations: usize,
    pub convergence: ConvergenceVerdict,
}

pub fn summarize(tg: &TransitionGraph, c: usize) -> ExploreSummary {
    ExploreSummary {
        states: tg.state_count(),
        transitions: tg.transition_count(),
        byzantine: tg.byzantine.iter().copied().collect(),
        radius: c,
        closure_violations: tg.check_closure(c).len(),
        convergence: tg.check_convergence(c),
    }
}
