//! Step engine and per-run summaries.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{apply_step, Configuration, ProcessorState, Rule};
use crate::scheduler::{Candidate, Daemon};
use crate::topology::{NodeId, Topology};
use crate::verifier::{c_correct_set, contained, g_star_from, oracle_check_maximal, ClosureMonitor, GStarReport, MatchingTally};

use super::config::{InitSpec, RunConfig};
use super::trace::{Trace, TraceWriter};

/// Stream for the initial-configuration RNG, kept apart from the daemon's.
const INIT_STREAM: u64 = 0x1d;

/// What happened in one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub fired: Vec<(NodeId, Rule)>,
    pub writes: BTreeMap<NodeId, ProcessorState>,
}

/// Drives a single run: daemon selection, rule firing and Byzantine writes
/// on top of a current configuration.
pub struct Runner<'a> {
    config: &'a RunConfig,
    daemon: Daemon,
    correct: Vec<NodeId>,
    current: Configuration,
    step: u64,
}

impl<'a> Runner<'a> {
    pub fn new(config: &'a RunConfig, initial: Configuration) -> Result<Self> {
        initial.validate(&config.topology)?;
        let daemon = Daemon::new(config.daemon_kind(), &config.topology, config.fair_cap)?;
        let correct = config.topology.nodes().filter(|&v| !config.faults.is_active(v)).collect();
        Ok(Runner { config, daemon, correct, current: initial, step: 0 })
    }

    pub fn current(&self) -> &Configuration {
        &self.current
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn max_waiting(&self) -> usize {
        self.daemon.ledger().max_waiting()
    }

    /// Correct nodes with an enabled rule.
    pub fn enabled(&self) -> Vec<(NodeId, Rule)> {
        let topo = &self.config.topology;
        self.correct
            .iter()
            .filter_map(|&v| self.config.protocol.enabled_rule(topo, &self.current, v).map(|r| (v, r)))
            .collect()
    }

    /// No correct node can move and no Byzantine node will ever write.
    pub fn is_terminal(&self) -> bool {
        self.config.faults.is_quiet() && self.enabled().is_empty()
    }

    /// Executes one step, or returns `None` once the run is over.
    pub fn step(&mut self) -> Option<StepOutcome> {
        if self.step >= self.config.max_steps || self.is_terminal() {
            return None;
        }
        let topo = &self.config.topology;
        let enabled = self.enabled();
        let mut writes = self.config.faults.writes(topo, &self.current, self.step);
        let mut candidates: Vec<Candidate> =
            enabled.iter().map(|&(node, rule)| Candidate { node, rule: Some(rule) }).collect();
        if self.config.schedule_byzantine {
            candidates.extend(writes.keys().map(|&node| Candidate { node, rule: None }));
            candidates.sort_by_key(|c| c.node);
        }
        let selected = self.daemon.select(self.config.protocol, topo, &self.current, &candidates);
        let fired: Vec<(NodeId, Rule)> = enabled.into_iter().filter(|(v, _)| selected.contains(v)).collect();
        if self.config.schedule_byzantine {
            writes.retain(|b, _| selected.contains(b));
        }
        self.current = apply_step(self.config.protocol, topo, &self.current, &fired, &writes);
        self.step += 1;
        Some(StepOutcome { fired, writes })
    }
}

/// Initial configuration for a (non-exhaustive) run.
pub fn initial_configuration(config: &RunConfig) -> Result<Configuration> {
    match &config.init {
        InitSpec::AllNull => Ok(Configuration::all_null(&config.topology)),
        InitSpec::Explicit(cfg) => Ok(cfg.clone()),
        InitSpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(INIT_STREAM);
            Ok(Configuration::random(&config.topology, &mut rng))
        }
        InitSpec::Exhaustive => Err(Error::Usage(
            "exhaustive initial configurations need a campaign, not a single run".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    /// The run stopped because nothing could move any more.
    pub terminated: bool,
    /// Fault-free: terminated in a contained configuration. With active
    /// Byzantine nodes: contained at every configuration of the final
    /// quarter of the run.
    pub converged: bool,
    pub radius: usize,
    /// Index of the first configuration that is 2-contained.
    pub first_contained_2: Option<u64>,
    /// Index from which radius-`c` containment held to the end.
    pub contained_since: Option<u64>,
    /// First step breaking 1-, 2- and radius-`c` containment closure.
    pub closure_violation_1: Option<u64>,
    pub closure_violation_2: Option<u64>,
    pub closure_violation: Option<u64>,
    /// Matching checks on every radius-`c` contained configuration.
    pub matching: MatchingTally,
    pub final_g_star: GStarReport,
    pub final_oracle_maximal: bool,
    pub max_fairness_wait: usize,
}

impl Summary {
    /// All checks a single run can fail: closure at radius `c`, the matching
    /// property, and convergence.
    pub fn passed(&self) -> bool {
        self.closure_violation.is_none() && self.matching.clean() && self.converged
    }
}

/// Accumulates a [`Summary`] from the sequence of configurations of a run.
pub struct SummaryBuilder {
    topo: Topology,
    radius: usize,
    quiet: bool,
    v1: BTreeSet<NodeId>,
    v2: BTreeSet<NodeId>,
    vc: BTreeSet<NodeId>,
    monitors: [ClosureMonitor; 3],
    violations: [Option<u64>; 3],
    contained_c: Vec<bool>,
    first_contained_2: Option<u64>,
    matching: MatchingTally,
}

impl SummaryBuilder {
    pub fn new(topo: &Topology, active_byzantine: &BTreeSet<NodeId>, radius: usize) -> Self {
        SummaryBuilder {
            topo: topo.clone(),
            radius,
            quiet: active_byzantine.is_empty(),
            v1: c_correct_set(topo, active_byzantine, 1),
            v2: c_correct_set(topo, active_byzantine, 2),
            vc: c_correct_set(topo, active_byzantine, radius),
            monitors: Default::default(),
            violations: [None; 3],
            contained_c: Vec::new(),
            first_contained_2: None,
            matching: MatchingTally::default(),
        }
    }

    /// Feeds configuration number `index` (0 = initial).
    pub fn observe(&mut self, cfg: &Configuration) {
        let index = self.contained_c.len() as u64;
        let flags = [
            contained(&self.topo, cfg, &self.v1),
            contained(&self.topo, cfg, &self.v2),
            contained(&self.topo, cfg, &self.vc),
        ];
        for (i, &flag) in flags.iter().enumerate() {
            if self.monitors[i].observe(flag) && self.violations[i].is_none() {
                self.violations[i] = Some(index - 1);
            }
        }
        if flags[1] && self.first_contained_2.is_none() {
            self.first_contained_2 = Some(index);
        }
        if flags[2] {
            self.matching.record(&self.topo, cfg, &self.vc);
        }
        self.contained_c.push(flags[2]);
    }

    pub fn finish(self, last: &Configuration, terminated: bool, max_fairness_wait: usize) -> Summary {
        let steps = self.contained_c.len() as u64 - 1;
        let contained_since = self
            .contained_c
            .iter()
            .rposition(|&c| !c)
            .map_or(Some(0), |i| ((i as u64) < steps).then_some(i as u64 + 1));
        let converged = if self.quiet {
            terminated && *self.contained_c.last().expect("observed initial configuration")
        } else {
            let window_start = steps - steps / 4;
            contained_since.is_some_and(|s| s <= window_start)
        };
        let final_g_star = g_star_from(&self.topo, last, &self.vc);
        let final_oracle_maximal = oracle_check_maximal(&final_g_star.edges, &final_g_star.matched);
        Summary {
            steps,
            terminated,
            converged,
            radius: self.radius,
            first_contained_2: self.first_contained_2,
            contained_since,
            closure_violation_1: self.violations[0],
            closure_violation_2: self.violations[1],
            closure_violation: self.violations[2],
            matching: self.matching,
            final_g_star,
            final_oracle_maximal,
            max_fairness_wait,
        }
    }
}

/// Runs from `initial` without recording a trace.
pub fn run_summary(config: &RunConfig, initial: Configuration) -> Result<Summary> {
    let mut runner = Runner::new(config, initial)?;
    let mut builder = SummaryBuilder::new(&config.topology, &config.faults.active(), config.radius);
    builder.observe(runner.current());
    let mut max_wait = 0;
    while runner.step().is_some() {
        builder.observe(runner.current());
        max_wait = max_wait.max(runner.max_waiting());
    }
    let terminated = runner.is_terminal();
    Ok(builder.finish(runner.current(), terminated, max_wait))
}

/// Runs the configuration and records a full trace.
pub fn simulate(config: &RunConfig) -> Result<(Trace, Summary)> {
    config.validate()?;
    let initial = initial_configuration(config)?;
    let mut runner = Runner::new(config, initial)?;
    let active = config.faults.active();
    let mut builder = SummaryBuilder::new(&config.topology, &active, config.radius);
    let mut writer = TraceWriter::new(config, runner.current());
    builder.observe(runner.current());
    let mut max_wait = 0;
    while let Some(outcome) = runner.step() {
        builder.observe(runner.current());
        max_wait = max_wait.max(runner.max_waiting());
        writer.step(runner.steps_taken() - 1, &outcome, runner.current());
    }
    let terminated = runner.is_terminal();
    let summary = builder.finish(runner.current(), terminated, max_wait);
    let trace = writer.finish(&summary);
    Ok((trace, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{counterexample_script, FaultModel, Strategy};
    use crate::protocol::spec;
    use crate::topology::GeneratorSpec;

    fn topo(spec: GeneratorSpec) -> Topology {
        Topology::generate(&spec, 0).unwrap()
    }

    #[test]
    fn p4_all_null_converges_to_maximal_matching() {
        let p4 = topo(GeneratorSpec::Path(4));
        let mut cfg = RunConfig::new(p4.clone());
        cfg.init = InitSpec::AllNull;
        cfg.seed = 1;
        let (_, summary) = simulate(&cfg).unwrap();
        assert!(summary.terminated && summary.converged);
        assert!(summary.final_g_star.is_maximal && summary.final_oracle_maximal);
        assert_eq!(summary.final_g_star.nodes.len(), 4);
        assert!(summary.passed());
    }

    #[test]
    fn counterexample_run_breaks_radius_one_only() {
        let p3 = topo(GeneratorSpec::Path(3));
        let script = counterexample_script(&p3).unwrap();
        let mut cfg = RunConfig::new(p3.clone());
        cfg.faults = script.faults.clone();
        cfg.init = InitSpec::Explicit(script.initial.clone());
        cfg.max_steps = 10;
        let (_, summary) = simulate(&cfg).unwrap();
        assert_eq!(summary.closure_violation_1, Some(script.divorce_step));
        assert_eq!(summary.closure_violation_2, None);
        assert_eq!(summary.steps, 10);
        assert!(!summary.terminated);
    }

    #[test]
    fn silent_byzantine_runs_like_a_correct_node() {
        let ring = topo(GeneratorSpec::Ring(6));
        let mut plain = RunConfig::new(ring.clone());
        plain.seed = 42;
        let mut silent = plain.clone();
        silent.faults = FaultModel::uniform(&ring, &[NodeId(0), NodeId(3)], Strategy::Silent).unwrap();
        let (a, sa) = simulate(&plain).unwrap();
        let (b, sb) = simulate(&silent).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn byzantine_runs_use_the_full_budget() {
        let p6 = topo(GeneratorSpec::Path(6));
        let mut cfg = RunConfig::new(p6.clone());
        cfg.faults = FaultModel::uniform(&p6, &[NodeId(0)], Strategy::Random { seed: 3 }).unwrap();
        cfg.seed = 3;
        let s = run_summary(&cfg, initial_configuration(&cfg).unwrap()).unwrap();
        assert_eq!(s.steps, cfg.max_steps);
        assert!(s.closure_violation_2.is_none());
        assert!(s.converged, "{s:?}");
    }

    #[test]
    fn scheduled_byzantine_moves_respect_independence() {
        let p4 = topo(GeneratorSpec::Path(4));
        let mut cfg = RunConfig::new(p4.clone());
        cfg.faults = FaultModel::uniform(&p4, &[NodeId(0)], Strategy::OscillatingDivorce { period: 1 }).unwrap();
        cfg.schedule_byzantine = true;
        cfg.max_steps = 200;
        let initial = initial_configuration(&cfg).unwrap();
        let mut runner = Runner::new(&cfg, initial).unwrap();
        let mut byz_moves = 0;
        while let Some(outcome) = runner.step() {
            if outcome.writes.contains_key(&NodeId(0)) {
                byz_moves += 1;
                assert!(outcome.fired.iter().all(|(v, _)| *v != NodeId(1)));
            }
        }
        assert!(byz_moves > 0);
    }

    #[test]
    fn exhaustive_init_is_rejected_for_single_runs() {
        let mut cfg = RunConfig::new(topo(GeneratorSpec::Path(3)));
        cfg.init = InitSpec::Exhaustive;
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn terminal_configurations_satisfy_spec_everywhere() {
        let g = topo(GeneratorSpec::Gnp { n: 7, p: 0.4 });
        for seed in 0..30 {
            let cfg = RunConfig::new(g.clone()).with_seed(seed);
            let initial = initial_configuration(&cfg).unwrap();
            let mut runner = Runner::new(&cfg, initial).unwrap();
            while runner.step().is_some() {}
            assert!(runner.is_terminal());
            assert!(g.nodes().all(|v| spec(&g, runner.current(), v)));
        }
    }
}
