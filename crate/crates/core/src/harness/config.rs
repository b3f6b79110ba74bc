//! Run configuration: what to simulate and how.
//!
//! A [`RunConfig`] can come from CLI flags, from a TOML file, or both (flags
//! win). Parsing helpers for the small `name:params` flag syntaxes live here
//! too.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::adversary::{FaultModel, Strategy};
use crate::error::{Error, Result};
use crate::protocol::{parse_state_line, Configuration, Protocol};
use crate::scheduler::{default_fair_cap, DaemonKind};
use crate::topology::{GeneratorSpec, NodeId, Topology};

/// Daemon family; the seed comes from [`RunConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DaemonChoice {
    #[default]
    RandomFair,
    RoundRobin,
    AdversarialGreedy,
}

impl std::str::FromStr for DaemonChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-fair" | "random" => Ok(DaemonChoice::RandomFair),
            "round-robin" => Ok(DaemonChoice::RoundRobin),
            "adversarial" | "adversarial-greedy" => Ok(DaemonChoice::AdversarialGreedy),
            "exhaustive" => Err(Error::Usage("the exhaustive daemon is only available through `explore`".into())),
            _ => Err(Error::Usage(format!(
                "unknown daemon {s:?}; expected random-fair, round-robin or adversarial"
            ))),
        }
    }
}

impl DaemonChoice {
    pub fn with_seed(self, seed: u64) -> DaemonKind {
        match self {
            DaemonChoice::RandomFair => DaemonKind::RandomFair { seed },
            DaemonChoice::RoundRobin => DaemonKind::RoundRobin,
            DaemonChoice::AdversarialGreedy => DaemonKind::AdversarialGreedy { seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitSpec {
    /// Every `pref` null.
    AllNull,
    /// Uniform in-domain configuration drawn from the run seed.
    Random,
    /// Every in-domain configuration (campaigns only).
    Exhaustive,
    Explicit(Configuration),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: Topology,
    pub faults: FaultModel,
    pub daemon: DaemonChoice,
    pub seed: u64,
    pub fair_cap: usize,
    pub init: InitSpec,
    pub max_steps: u64,
    pub radius: usize,
    pub protocol: Protocol,
    /// Byzantine nodes compete with correct ones for daemon selection; a
    /// Byzantine write only lands when its node is selected.
    pub schedule_byzantine: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults: no faults, random-fair daemon, seed 0, cap `4·n`,
    /// `20·n²` steps, radius 2, random initial configuration.
    pub fn new(topology: Topology) -> Self {
        let n = topology.node_count() as u64;
        RunConfig {
            fair_cap: default_fair_cap(&topology),
            topology,
            faults: FaultModel::none(),
            daemon: DaemonChoice::default(),
            seed: 0,
            init: InitSpec::Random,
            max_steps: default_max_steps(n as usize),
            radius: 2,
            protocol: Protocol::Ssmm,
            schedule_byzantine: false,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if let InitSpec::Explicit(cfg) = &self.init {
            cfg.validate(&self.topology)?;
        }
        // Surfaces cap problems at load time rather than mid-run.
        crate::scheduler::Daemon::new(self.daemon.with_seed(self.seed), &self.topology, self.fair_cap)?;
        Ok(())
    }

    pub fn daemon_kind(&self) -> DaemonKind {
        self.daemon.with_seed(self.seed)
    }

    /// Copy of this configuration with every seed derived from `seed`.
    /// Reseeding with the current seed changes nothing.
    pub fn with_seed(&self, seed: u64) -> RunConfig {
        let mut out = self.clone();
        out.seed = seed;
        let reseeded = self
            .faults
            .strategies()
            .iter()
            .map(|(&b, s)| {
                let s = match s {
                    Strategy::Random { seed: base } => Strategy::Random { seed: base ^ (seed ^ self.seed).rotate_left(17) },
                    other => other.clone(),
                };
                (b, s)
            })
            .collect();
        out.faults = FaultModel::new(&self.topology, reseeded).expect("reseeding keeps strategies valid");
        out
    }
}

pub fn default_max_steps(n: usize) -> u64 {
    20 * (n as u64) * (n as u64)
}

/// Parses `1,3,5` into node ids.
pub fn parse_node_list(s: &str) -> Result<Vec<NodeId>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Usage(format!("bad node id {t:?}"))))
        .collect()
}

/// Parses `silent`, `random[:SEED]`, `oscillating:PERIOD` or
/// `scripted:FILE` (lines `step id pref prev_pref`). The script file is
/// read here; the result maps node ids to scripted entries.
pub fn parse_strategy(s: &str, topo: &Topology, nodes: &[NodeId], seed: u64) -> Result<FaultModel> {
    let (name, param) = match s.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (s, None),
    };
    let bad = |what: &str| Error::Usage(format!("bad strategy {s:?}: {what}"));
    let uniform = |strategy: Strategy| FaultModel::uniform(topo, nodes, strategy);
    match (name, param) {
        ("silent", None) => uniform(Strategy::Silent),
        ("random", None) => uniform(Strategy::Random { seed }),
        ("random", Some(p)) => uniform(Strategy::Random { seed: p.parse().map_err(|_| bad("seed must be an integer"))? }),
        ("oscillating", Some(p)) => {
            uniform(Strategy::OscillatingDivorce { period: p.parse().map_err(|_| bad("period must be an integer"))? })
        }
        ("scripted", Some(path)) => {
            let text = read_file(Path::new(path))?;
            let mut scripts = parse_script(&text)?;
            for &b in scripts.keys() {
                if !nodes.contains(&b) {
                    return Err(Error::Config(format!("script writes node {b}, which is not Byzantine")));
                }
            }
            let strategies = nodes
                .iter()
                .map(|&b| (b, Strategy::Scripted(scripts.remove(&b).unwrap_or_default())))
                .collect();
            FaultModel::new(topo, strategies)
        }
        _ => Err(bad("expected silent, random[:SEED], oscillating:PERIOD or scripted:FILE")),
    }
}

/// Script lines: `step id pref prev_pref`, `-` for a null `pref`.
pub fn parse_script(text: &str) -> Result<BTreeMap<NodeId, Vec<(u64, crate::protocol::ProcessorState)>>> {
    let mut out: BTreeMap<NodeId, Vec<_>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (step, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Config(format!("script line {}: expected `step id pref prev_pref`", lineno + 1)))?;
        let step: u64 = step
            .parse()
            .map_err(|_| Error::Config(format!("script line {}: bad step {step:?}", lineno + 1)))?;
        let (b, st) = parse_state_line(rest).map_err(|e| Error::Config(format!("script line {}: {e}", lineno + 1)))?;
        out.entry(b).or_default().push((step, st));
    }
    Ok(out)
}

pub fn parse_init(s: &str, topo: &Topology) -> Result<InitSpec> {
    match s {
        "random" => Ok(InitSpec::Random),
        "null" => Ok(InitSpec::AllNull),
        "exhaustive" => Ok(InitSpec::Exhaustive),
        path => Ok(InitSpec::Explicit(Configuration::parse(topo, &read_file(Path::new(path))?)?)),
    }
}

pub fn parse_protocol(s: &str) -> Result<Protocol> {
    match s {
        "ssmm" => Ok(Protocol::Ssmm),
        "frozen-memory" => Ok(Protocol::FrozenMemory),
        "no-abandon" => Ok(Protocol::NoAbandon),
        _ => Err(Error::Usage(format!("unknown protocol {s:?}; expected ssmm, frozen-memory or no-abandon"))),
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_topology(file: Option<&Path>, generator: Option<&str>, seed: u64) -> Result<Topology> {
    match (file, generator) {
        (Some(path), None) => Topology::parse(&read_file(path)?),
        (None, Some(spec)) => Topology::generate(&spec.parse::<GeneratorSpec>()?, seed),
        (Some(_), Some(_)) => Err(Error::Usage("give either a topology file or a generator, not both".into())),
        (None, None) => Err(Error::Usage("a topology is required (--topology FILE or --gen KIND:PARAMS)".into())),
    }
}

/// On-disk TOML form of a run configuration. Every field is optional so
/// CLI flags can fill or override it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: Option<String>,
    pub topology_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub daemon: Option<String>,
    pub fair_cap: Option<usize>,
    pub max_steps: Option<u64>,
    pub radius: Option<usize>,
    pub init: Option<String>,
    pub protocol: Option<String>,
    pub schedule_byzantine: Option<bool>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub byzantine: Vec<ByzantineEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineEntry {
    pub node: u32,
    pub strategy: String,
    pub seed: Option<u64>,
    pub period: Option<u64>,
    /// Lines `step id pref prev_pref`; `id` must equal `node`.
    #[serde(default)]
    pub script: Vec<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn fault_model(&self, topo: &Topology, default_seed: u64) -> Result<FaultModel> {
        let mut strategies = BTreeMap::new();
        for entry in &self.byzantine {
            let b = NodeId(entry.node);
            let strategy = match entry.strategy.as_str() {
                "silent" => Strategy::Silent,
                "random" => Strategy::Random { seed: entry.seed.unwrap_or(default_seed) },
                "oscillating" => Strategy::OscillatingDivorce {
                    period: entry
                        .period
                        .ok_or_else(|| Error::Config(format!("node {b}: oscillating needs `period`")))?,
                },
                "scripted" => {
                    let parsed = parse_script(&entry.script.join("\n"))?;
                    if parsed.keys().any(|&k| k != b) {
                        return Err(Error::Config(format!("node {b}: script entries must name node {b}")));
                    }
                    Strategy::Scripted(parsed.into_values().next().unwrap_or_default())
                }
                other => return Err(Error::Config(format!("node {b}: unknown strategy {other:?}"))),
            };
            if strategies.insert(b, strategy).is_some() {
                return Err(Error::Config(format!("node {b} listed twice")));
            }
        }
        FaultModel::new(topo, strategies)
    }
}
