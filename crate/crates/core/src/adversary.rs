//! Byzantine processors and the strategies that drive their writes.
//!
//! A Byzantine node is never scheduled by the daemon (unless the harness is
//! asked to); instead, every step, its strategy may overwrite its state with
//! any in-domain value. Neighbors only ever read `pref`, so the in-domain
//! restriction costs the adversary nothing.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::protocol::{domain_size, Configuration, ProcessorState};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Uniform in-domain state every step.
    Random { seed: u64 },
    /// `period` steps pointing at a neighbor (one that proposes to us if
    /// any), then `period` steps with a null `pref`, forever.
    OscillatingDivorce { period: u64 },
    /// Writes the listed state at the listed step, nothing otherwise.
    Scripted(Vec<(u64, ProcessorState)>),
    /// Runs the protocol like a correct node.
    Silent,
}

impl Strategy {
    fn validate(&self, topo: &Topology, b: NodeId) -> Result<()> {
        match self {
            Strategy::OscillatingDivorce { period: 0 } => {
                Err(Error::Config(format!("node {b}: oscillation period must be at least 1")))
            }
            Strategy::Scripted(entries) => {
                for (step, st) in entries {
                    if !st.is_valid_for(topo, b) {
                        return Err(Error::Config(format!(
                            "node {b}: scripted state at step {step} is out of domain"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn write(&self, topo: &Topology, cfg: &Configuration, b: NodeId, step: u64) -> Option<ProcessorState> {
        match self {
            Strategy::Silent => None,
            Strategy::Scripted(entries) => entries.iter().find(|(s, _)| *s == step).map(|(_, st)| *st),
            Strategy::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, b.0 as u64, step));
                let nbrs = topo.neighbors(b);
                let idx = rng.gen_range(0..domain_size(topo, b));
                let pref = match idx / nbrs.len() {
                    0 => None,
                    k => Some(nbrs[k - 1]),
                };
                Some(ProcessorState::new(pref, nbrs[idx % nbrs.len()]))
            }
            Strategy::OscillatingDivorce { period } => {
                let prev = cfg.state(b).prev_pref;
                if (step / period) % 2 == 1 {
                    return Some(ProcessorState::new(None, prev));
                }
                let nbrs = topo.neighbors(b);
                let target = nbrs
                    .iter()
                    .copied()
                    .find(|&u| cfg.pref(u) == Some(b))
                    .unwrap_or(nbrs[((step / (2 * period)) % nbrs.len() as u64) as usize]);
                Some(ProcessorState::new(Some(target), prev))
            }
        }
    }
}

/// Splitmix-style combination of seed, node and step into one RNG seed.
fn mix(seed: u64, node: u64, step: u64) -> u64 {
    let mut z = seed
        .wrapping_add(node.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(step.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The Byzantine node set and the strategy each one follows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultModel {
    strategies: BTreeMap<NodeId, Strategy>,
}

impl FaultModel {
    pub fn none() -> Self {
        FaultModel::default()
    }

    pub fn new(topo: &Topology, strategies: BTreeMap<NodeId, Strategy>) -> Result<Self> {
        for (&b, strategy) in &strategies {
            if !topo.contains(b) {
                return Err(Error::Config(format!("Byzantine node {b} out of range (n={})", topo.node_count())));
            }
            strategy.validate(topo, b)?;
        }
        Ok(FaultModel { strategies })
    }

    /// Same strategy for every listed node.
    pub fn uniform(topo: &Topology, nodes: &[NodeId], strategy: Strategy) -> Result<Self> {
        FaultModel::new(topo, nodes.iter().map(|&b| (b, strategy.clone())).collect())
    }

    pub fn strategies(&self) -> &BTreeMap<NodeId, Strategy> {
        &self.strategies
    }

    /// Every declared Byzantine node, including silent ones.
    pub fn declared(&self) -> BTreeSet<NodeId> {
        self.strategies.keys().copied().collect()
    }

    /// Byzantine nodes that actually deviate from the protocol. Silent nodes
    /// are indistinguishable from correct ones and are treated as such.
    pub fn active(&self) -> BTreeSet<NodeId> {
        self.strategies
            .iter()
            .filter(|(_, s)| **s != Strategy::Silent)
            .map(|(&b, _)| b)
            .collect()
    }

    pub fn is_active(&self, v: NodeId) -> bool {
        self.strategies.get(&v).is_some_and(|s| *s != Strategy::Silent)
    }

    pub fn is_quiet(&self) -> bool {
        self.strategies.values().all(|s| *s == Strategy::Silent)
    }

    /// States the active Byzantine nodes write at `step`, computed from the
    /// start-of-step configuration.
    pub fn writes(&self, topo: &Topology, cfg: &Configuration, step: u64) -> BTreeMap<NodeId, ProcessorState> {
        self.strategies
            .iter()
            .filter_map(|(&b, s)| s.write(topo, cfg, b, step).map(|st| (b, st)))
            .collect()
    }
}

/// The three-node scenario showing that radius 1 cannot be achieved.
#[derive(Debug, Clone)]
pub struct CounterexampleScript {
    pub initial: Configuration,
    pub faults: FaultModel,
    /// The Byzantine endpoint.
    pub byzantine: NodeId,
    /// Correct node married to the Byzantine one.
    pub partner: NodeId,
    /// Dead node at distance 2 that gets pushed out of spec.
    pub victim: NodeId,
    /// Step at which the Byzantine node divorces.
    pub divorce_step: u64,
}

/// On a path `b - v - u`: `b` and `v` married, `u` dead, then `b` drops its
/// `pref` at step 0 and `u` becomes single.
pub fn counterexample_script(topo: &Topology) -> Result<CounterexampleScript> {
    if topo.node_count() != 3 || topo.edges().len() != 2 {
        return Err(Error::Usage("the counterexample needs the 3-node path".into()));
    }
    let b = topo.nodes().find(|&v| topo.degree(v) == 1).expect("a path has endpoints");
    let v = topo.neighbors(b)[0];
    let u = *topo.neighbors(v).iter().find(|&&w| w != b).expect("middle node has degree 2");
    let mut initial = Configuration::all_null(topo);
    initial.set(b, ProcessorState::new(Some(v), v));
    initial.set(v, ProcessorState::new(Some(b), u));
    initial.set(u, ProcessorState::new(None, v));
    let divorce_step = 0;
    let faults = FaultModel::uniform(
        topo,
        &[b],
        Strategy::Scripted(vec![(divorce_step, ProcessorState::new(None, v))]),
    )?;
    Ok(CounterexampleScript { initial, faults, byzantine: b, partner: v, victim: u, divorce_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{apply_step, classify, spec, Protocol, Status};
    use crate::topology::GeneratorSpec;

    fn path(n: usize) -> Topology {
        Topology::generate(&GeneratorSpec::Path(n), 0).unwrap()
    }

    #[test]
    fn silent_writes_nothing() {
        let p = path(2);
        let fm = FaultModel::uniform(&p, &[NodeId(0)], Strategy::Silent).unwrap();
        let cfg = Configuration::all_null(&p);
        for step in 0..10 {
            assert!(fm.writes(&p, &cfg, step).is_empty());
        }
        assert!(fm.is_quiet());
        assert!(fm.active().is_empty());
    }

    #[test]
    fn oscillating_divorce_period_one() {
        let p = path(2);
        let (b, v) = (NodeId(0), NodeId(1));
        let fm = FaultModel::uniform(&p, &[b], Strategy::OscillatingDivorce { period: 1 }).unwrap();
        let cfg = Configuration::all_null(&p);
        for step in 0..6 {
            let w = fm.writes(&p, &cfg, step);
            let expected = if step % 2 == 0 { Some(v) } else { None };
            assert_eq!(w[&b].pref, expected, "step {step}");
        }
    }

    #[test]
    fn oscillating_divorce_confirms_proposers() {
        let star = Topology::generate(&GeneratorSpec::Star(4), 0).unwrap();
        let cfg = Configuration::from_prefs(&star, &[None, None, None, Some(0)]).unwrap();
        let fm = FaultModel::uniform(&star, &[NodeId(0)], Strategy::OscillatingDivorce { period: 3 }).unwrap();
        assert_eq!(fm.writes(&star, &cfg, 2)[&NodeId(0)].pref, Some(NodeId(3)));
        assert_eq!(fm.writes(&star, &cfg, 3)[&NodeId(0)].pref, None);
    }

    #[test]
    fn scripted_emits_only_at_listed_steps() {
        let p = path(3);
        let b = NodeId(0);
        let st = ProcessorState::new(None, NodeId(1));
        let fm = FaultModel::uniform(&p, &[b], Strategy::Scripted(vec![(3, st)])).unwrap();
        let cfg = Configuration::all_null(&p);
        assert!(fm.writes(&p, &cfg, 2).is_empty());
        assert_eq!(fm.writes(&p, &cfg, 3), BTreeMap::from([(b, st)]));
        let bad = Strategy::Scripted(vec![(0, ProcessorState::new(Some(NodeId(2)), NodeId(1)))]);
        assert!(FaultModel::uniform(&p, &[b], bad).is_err());
        assert!(FaultModel::uniform(&p, &[NodeId(5)], Strategy::Silent).is_err());
        assert!(FaultModel::uniform(&p, &[b], Strategy::OscillatingDivorce { period: 0 }).is_err());
    }

    #[test]
    fn random_writes_are_in_domain_and_deterministic() {
        let topo = Topology::generate(&GeneratorSpec::Gnp { n: 7, p: 0.5 }, 2).unwrap();
        let byz = [NodeId(1), NodeId(4)];
        let fm = FaultModel::uniform(&topo, &byz, Strategy::Random { seed: 11 }).unwrap();
        let cfg = Configuration::all_null(&topo);
        let mut distinct = BTreeSet::new();
        for step in 0..200 {
            let w = fm.writes(&topo, &cfg, step);
            assert_eq!(w, fm.writes(&topo, &cfg, step));
            assert_eq!(w.keys().copied().collect::<Vec<_>>(), byz.to_vec());
            for (&b, st) in &w {
                assert!(st.is_valid_for(&topo, b));
                distinct.insert((b, *st));
            }
        }
        let expected: usize = byz.iter().map(|&b| domain_size(&topo, b)).sum();
        assert_eq!(distinct.len(), expected);
    }

    #[test]
    fn counterexample_scenario() {
        let p3 = path(3);
        let script = counterexample_script(&p3).unwrap();
        let (b, v, u) = (script.byzantine, script.partner, script.victim);
        assert_eq!((b, v, u), (NodeId(0), NodeId(1), NodeId(2)));
        assert!(p3.nodes().all(|w| spec(&p3, &script.initial, w)));
        let writes = script.faults.writes(&p3, &script.initial, script.divorce_step);
        let after = apply_step(Protocol::Ssmm, &p3, &script.initial, &[], &writes);
        assert_eq!(classify(&p3, &after, u), Status::Single);
        assert!(!spec(&p3, &after, u));
        assert_eq!(p3.distance(u, b), 2);
        assert!(counterexample_script(&path(4)).is_err());
    }
}
