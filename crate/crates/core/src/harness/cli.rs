//! Command-line front end.
//!
//! Exit codes: 0 when the command ran and every check it performs passed,
//! 1 when a check failed (or a trace did not validate), 2 on usage and
//! configuration errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::adversary::{counterexample_script, FaultModel};
use crate::error::{Error, Result};
use crate::explorer;
use crate::topology::{GeneratorSpec, Topology};

use super::campaign::campaign;
use super::config::{self, ConfigFile, DaemonChoice, InitSpec, RunConfig};
use super::run::simulate;
use super::trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ssmm", version, about = "Simulate and verify a Byzantine-tolerant maximal matching protocol")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run once, print the summary and optionally write a trace.
    Simulate(RunArgs),
    /// Run many seeds in parallel and print aggregate statistics.
    Campaign {
        #[command(flatten)]
        run: RunArgs,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
    /// Enumerate the full state space and check closure and convergence.
    Explore(ExploreArgs),
    /// Replay the three-node scenario where radius 1 breaks but radius 2 holds.
    Counterexample {
        #[arg(long, default_value_t = 10)]
        max_steps: u64,
        /// Write the scenario's trace here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a generated topology in edge-list format.
    GenTopology {
        /// Generator, e.g. path:6, ring:5, star:4, grid:3x2, gnp:8:0.4.
        #[arg(long = "gen")]
        generator: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a trace's digest and replay it.
    ValidateTrace { trace: PathBuf },
}

#[derive(Debug, Args)]
struct TopologyArgs {
    /// Edge-list file.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Generator, e.g. path:6, ring:5, star:4, grid:3x2, gnp:8:0.4.
    #[arg(long = "gen")]
    generator: Option<String>,
    /// Comma-separated Byzantine node ids.
    #[arg(long)]
    byzantine: Option<String>,
    #[arg(long)]
    radius: Option<usize>,
    /// ssmm, frozen-memory or no-abandon.
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    topo: TopologyArgs,
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// silent, random[:SEED], oscillating:PERIOD or scripted:FILE.
    #[arg(long)]
    strategy: Option<String>,
    /// random-fair, round-robin or adversarial.
    #[arg(long)]
    daemon: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fair_cap: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// random, null, exhaustive or a configuration file.
    #[arg(long)]
    init: Option<String>,
    /// Let the daemon schedule Byzantine writes like ordinary moves.
    #[arg(long)]
    schedule_byzantine: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExploreArgs {
    #[command(flatten)]
    topo: TopologyArgs,
    /// Seed for randomized generators.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refuse instances with more states than this.
    #[arg(long, default_value_t = 1_000_000)]
    bound: u64,
    /// Write the transition graph in text form here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidTrace(_) => EXIT_CHECK_FAILED,
                _ => EXIT_USAGE,
            }
        }
    }
}

/// Installs the `SSMM_LOG`-driven stderr logger. Safe to call repeatedly.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("SSMM_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Simulate(args) => {
            let config = build_run_config(&args)?;
            if config.init == InitSpec::Exhaustive {
                return Err(Error::Usage("--init exhaustive is only valid for `campaign`".into()));
            }
            tracing::info!(n = config.topology.node_count(), seed = config.seed, "simulate");
            let (trace, summary) = simulate(&config)?;
            if let Some(path) = &config.out {
                write_bytes(path, &trace.to_bytes())?;
            }
            print_json(&summary)?;
            Ok(summary.passed())
        }
        Command::Campaign { run, seeds } => {
            let config = build_run_config(&run)?;
            tracing::info!(n = config.topology.node_count(), seeds, "campaign");
            let report = campaign(&config, seeds)?;
            if let Some(path) = &config.out {
                write_bytes(path, &to_json(&report)?)?;
            }
            print_json(&report.aggregate)?;
            let agg = &report.aggregate;
            Ok(agg.converged == agg.runs && agg.closure_violations == 0 && agg.matching.clean())
        }
        Command::Explore(args) => {
            let topology = load_topology(&args.topo, args.seed)?;
            let byzantine = byzantine_nodes(&args.topo, &topology)?;
            let radius = args.topo.radius.unwrap_or(2);
            let protocol = args.topo.protocol.as_deref().map(config::parse_protocol).transpose()?.unwrap_or_default();
            tracing::info!(n = topology.node_count(), "explore");
            let tg = explorer::build_with(protocol, &topology, &byzantine, args.bound)?;
            if let Some(path) = &args.dump {
                write_bytes(path, tg.dump().as_bytes())?;
            }
            let summary = explorer::summarize(&tg, radius);
            print_json(&summary)?;
            Ok(summary.closure_violations == 0 && summary.convergence.holds)
        }
        Command::Counterexample { max_steps, out } => {
            let topology = Topology::generate(&GeneratorSpec::Path(3), 0)?;
            let script = counterexample_script(&topology)?;
            let mut config = RunConfig::new(topology);
            config.faults = script.faults.clone();
            config.init = InitSpec::Explicit(script.initial.clone());
            config.max_steps = max_steps;
            let (trace, summary) = simulate(&config)?;
            if let Some(path) = &out {
                write_bytes(path, &trace.to_bytes())?;
            }
            #[derive(Serialize)]
            struct Verdicts {
                byzantine: crate::topology::NodeId,
                victim: crate::topology::NodeId,
                divorce_step: u64,
                closure_violation_1: Option<u64>,
                closure_violation_2: Option<u64>,
                radius_1_breaks: bool,
                radius_2_holds: bool,
            }
            let verdicts = Verdicts {
                byzantine: script.byzantine,
                victim: script.victim,
                divorce_step: script.divorce_step,
                closure_violation_1: summary.closure_violation_1,
                closure_violation_2: summary.closure_violation_2,
                radius_1_breaks: summary.closure_violation_1 == Some(script.divorce_step),
                radius_2_holds: summary.closure_violation_2.is_none(),
            };
            print_json(&verdicts)?;
            Ok(verdicts.radius_1_breaks && verdicts.radius_2_holds)
        }
        Command::GenTopology { generator, seed, out } => {
            let topology = Topology::generate(&generator.parse::<GeneratorSpec>()?, seed)?;
            let text = topology.to_edge_list();
            match out {
                Some(path) => write_bytes(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::ValidateTrace { trace: path } => {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let report = trace::validate(&bytes)?;
            print_json(&report)?;
            Ok(true)
        }
    }
}

fn load_topology(args: &TopologyArgs, seed: u64) -> Result<Topology> {
    config::load_topology(args.topology.as_deref(), args.generator.as_deref(), seed)
}

fn byzantine_nodes(args: &TopologyArgs, topo: &Topology) -> Result<std::collections::BTreeSet<crate::topology::NodeId>> {
    let nodes = args.byzantine.as_deref().map(config::parse_node_list).transpose()?.unwrap_or_default();
    if let Some(&b) = nodes.iter().find(|&&b| !topo.contains(b)) {
        return Err(Error::Config(format!("Byzantine node {b} out of range (n={})", topo.node_count())));
    }
    Ok(nodes.into_iter().collect())
}

/// Merges the optional TOML file with command-line flags (flags win).
fn build_run_config(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let topology = if args.topo.topology.is_some() || args.topo.generator.is_some() {
        load_topology(&args.topo, seed)?
    } else {
        config::load_topology(file.topology_file.as_deref(), file.topology.as_deref(), seed)?
    };
    let mut config = RunConfig::new(topology);
    config.seed = seed;
    config.faults = match &args.topo.byzantine {
        Some(list) => {
            let nodes = config::parse_node_list(list)?;
            config::parse_strategy(args.strategy.as_deref().unwrap_or("random"), &config.topology, &nodes, seed)?
        }
        None if args.strategy.is_some() => {
            return Err(Error::Usage("--strategy needs --byzantine".into()));
        }
        None => file.fault_model(&config.topology, seed)?,
    };
    if let Some(d) = args.daemon.as_deref().or(file.daemon.as_deref()) {
        config.daemon = d.parse::<DaemonChoice>()?;
    }
    if let Some(cap) = args.fair_cap.or(file.fair_cap) {
        config.fair_cap = cap;
    }
    if let Some(steps) = args.max_steps.or(file.max_steps) {
        config.max_steps = steps;
    }
    if let Some(radius) = args.topo.radius.or(file.radius) {
        config.radius = radius;
    }
    if let Some(init) = args.init.as_deref().or(file.init.as_deref()) {
        config.init = config::parse_init(init, &config.topology)?;
    }
    if let Some(p) = args.topo.protocol.as_deref().or(file.protocol.as_deref()) {
        config.protocol = config::parse_protocol(p)?;
    }
    config.schedule_byzantine = args.schedule_byzantine || file.schedule_byzantine.unwrap_or(false);
    config.out = args.out.clone().or(file.out);
    if config.faults == FaultModel::none() && config.schedule_byzantine {
        tracing::warn!("--schedule-byzantine has no effect without Byzantine nodes");
    }
    config.validate()?;
    Ok(config)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(format!("serializing output: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let bytes = to_json(value)?;
    std::io::stdout().write_all(&bytes).map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
