//! JSON Lines traces.
//!
//! A trace is a `header` record (instance, run parameters and the initial
//! configuration), one `step` record per executed step, a `summary` record,
//! and a closing `digest` record holding the SHA-256 of every preceding byte.
//! Configurations use the `id pref prev_pref` text encoding.
//!
//! [`validate`] checks the digest, then replays the run: every fired rule
//! must be enabled, every selection independent, every write in-domain and
//! Byzantine, and each recorded configuration, status line, containment
//! report, potential and the final summary must match what the replay
//! produces.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::protocol::{apply_step, classify_all, format_state, parse_state_line, Configuration, ProcessorState, Protocol, Rule};
use crate::scheduler::{is_independent, Candidate, DaemonKind, FairnessLedger};
use crate::topology::{NodeId, Topology};
use crate::verifier::{c_correct_set, potential_over, ContainmentReport};

use super::config::RunConfig;
use super::run::{StepOutcome, Summary, SummaryBuilder};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: Vec<String>,
    /// One status letter per node: P(roposing), M(arried), C (doomed),
    /// D(ead), S(ingle).
    pub status: String,
    pub c1: ContainmentReport,
    pub c2: ContainmentReport,
    pub potential: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub n: usize,
    pub edges: Vec<(NodeId, NodeId)>,
    /// Active Byzantine nodes; silent ones run the protocol and are listed
    /// as correct.
    pub byzantine: Vec<NodeId>,
    pub protocol: Protocol,
    pub daemon: DaemonKind,
    pub fair_cap: usize,
    pub max_steps: u64,
    pub radius: usize,
    pub schedule_byzantine: bool,
    pub initial: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub fired: Vec<(NodeId, Rule)>,
    pub writes: Vec<String>,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header(Header),
    Step(StepRecord),
    Summary(Summary),
    Digest { sha256: String },
}

/// Precomputed `V_1`, `V_2` for snapshot construction.
struct Snapshotter {
    topo: Topology,
    v1: BTreeSet<NodeId>,
    v2: BTreeSet<NodeId>,
}

impl Snapshotter {
    fn new(topo: &Topology, byzantine: &BTreeSet<NodeId>) -> Self {
        Snapshotter {
            topo: topo.clone(),
            v1: c_correct_set(topo, byzantine, 1),
            v2: c_correct_set(topo, byzantine, 2),
        }
    }

    fn snapshot(&self, cfg: &Configuration) -> Snapshot {
        Snapshot {
            config: cfg.to_lines(),
            status: classify_all(&self.topo, cfg).into_iter().map(|s| s.short()).collect(),
            c1: ContainmentReport::evaluate(&self.topo, cfg, &self.v1, 1),
            c2: ContainmentReport::evaluate(&self.topo, cfg, &self.v2, 2),
            potential: potential_over(&self.topo, cfg, &self.v2),
        }
    }
}

/// An emitted trace, one JSON document per line, digest line included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    lines: Vec<String>,
}

impl Trace {
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for line in &self.lines {
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        out
    }
}

pub struct TraceWriter {
    snapshotter: Snapshotter,
    lines: Vec<String>,
    hasher: Sha256,
}

impl TraceWriter {
    pub fn new(config: &RunConfig, initial: &Configuration) -> Self {
        let active = config.faults.active();
        let snapshotter = Snapshotter::new(&config.topology, &active);
        let header = Header {
            version: TRACE_VERSION,
            n: config.topology.node_count(),
            edges: config.topology.edges(),
            byzantine: active.iter().copied().collect(),
            protocol: config.protocol,
            daemon: config.daemon_kind(),
            fair_cap: config.fair_cap,
            max_steps: config.max_steps,
            radius: config.radius,
            schedule_byzantine: config.schedule_byzantine,
            initial: snapshotter.snapshot(initial),
        };
        let mut w = TraceWriter { snapshotter, lines: Vec::new(), hasher: Sha256::new() };
        w.push(&Record::Header(header));
        w
    }

    fn push(&mut self, record: &Record) {
        let line = serde_json::to_string(record).expect("trace records serialize");
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines.push(line);
    }

    pub fn step(&mut self, step: u64, outcome: &StepOutcome, cfg: &Configuration) {
        let record = StepRecord {
            step,
            fired: outcome.fired.clone(),
            writes: outcome.writes.iter().map(|(b, st)| format_state(*b, st)).collect(),
            snapshot: self.snapshotter.snapshot(cfg),
        };
        self.push(&Record::Step(record));
    }

    pub fn finish(mut self, summary: &Summary) -> Trace {
        self.push(&Record::Summary(summary.clone()));
        let digest = hex(&self.hasher.clone().finalize());
        let line = serde_json::to_string(&Record::Digest { sha256: digest }).expect("digest serializes");
        self.lines.push(line);
        Trace { lines: self.lines }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// What a successful validation established.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub steps: u64,
    pub n: usize,
    pub byzantine: Vec<NodeId>,
    pub summary: Summary,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidTrace(msg.into())
}

/// Integrity and replay validation of a serialized trace.
pub fn validate(bytes: &[u8]) -> Result<ValidationReport> {
    let text = std::str::from_utf8(bytes).map_err(|_| invalid("trace is not UTF-8"))?;
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| invalid("trace has fewer than two lines"))?;
    let (body, digest_line) = text.split_at(body_end);
    if !digest_line.ends_with('\n') || digest_line.matches('\n').count() != 1 {
        return Err(invalid("digest line must be the last, newline-terminated line"));
    }
    match serde_json::from_str::<Record>(digest_line.trim_end()) {
        Ok(Record::Digest { sha256 }) => {
            let actual = hex(&Sha256::digest(body.as_bytes()));
            if sha256 != actual {
                return Err(invalid(format!("digest mismatch: recorded {sha256}, computed {actual}")));
            }
        }
        _ => return Err(invalid("last line is not a digest record")),
    }

    let mut records = body.lines().enumerate().map(|(i, line)| {
        serde_json::from_str::<Record>(line).map_err(|e| invalid(format!("line {}: {e}", i + 1)))
    });
    let header = match records.next() {
        Some(Ok(Record::Header(h))) => h,
        Some(Err(e)) => return Err(e),
        _ => return Err(invalid("first record is not a header")),
    };
    if header.version != TRACE_VERSION {
        return Err(invalid(format!("unsupported trace version {}", header.version)));
    }
    let edges: Vec<(usize, usize)> = header.edges.iter().map(|(u, v)| (u.index(), v.index())).collect();
    let topo = Topology::from_edges(header.n, &edges).map_err(|e| invalid(format!("header topology: {e}")))?;
    let byzantine: BTreeSet<NodeId> = header.byzantine.iter().copied().collect();
    if byzantine.iter().any(|b| !topo.contains(*b)) {
        return Err(invalid("header lists an out-of-range Byzantine node"));
    }
    let snapshotter = Snapshotter::new(&topo, &byzantine);
    let mut cfg = Configuration::parse(&topo, &header.initial.config.join("\n"))
        .map_err(|e| invalid(format!("initial configuration: {e}")))?;
    if snapshotter.snapshot(&cfg) != header.initial {
        return Err(invalid("initial snapshot does not match its configuration"));
    }

    let mut builder = SummaryBuilder::new(&topo, &byzantine, header.radius);
    builder.observe(&cfg);
    let mut ledger = FairnessLedger::new(topo.node_count());
    let mut max_wait = 0;
    let mut steps = 0u64;
    let mut recorded_summary = None;
    for record in records {
        let record = record?;
        if recorded_summary.is_some() {
            return Err(invalid("records after the summary"));
        }
        match record {
            Record::Step(step) => {
                if step.step != steps {
                    return Err(invalid(format!("expected step {steps}, found {}", step.step)));
                }
                if steps >= header.max_steps {
                    return Err(invalid("more steps than max_steps"));
                }
                let enabled: Vec<(NodeId, Rule)> = topo
                    .nodes()
                    .filter(|v| !byzantine.contains(v))
                    .filter_map(|v| header.protocol.enabled_rule(&topo, &cfg, v).map(|r| (v, r)))
                    .collect();
                if enabled.is_empty() && byzantine.is_empty() {
                    return Err(invalid(format!("step {steps} recorded after the run became terminal")));
                }
                let writes = parse_writes(&topo, &byzantine, &step.writes)
                    .map_err(|e| invalid(format!("step {steps}: {e}")))?;
                check_selection(&topo, &header, &enabled, &step.fired, &writes)
                    .map_err(|e| invalid(format!("step {steps}: {e}")))?;
                if !header.schedule_byzantine {
                    let candidates: Vec<Candidate> =
                        enabled.iter().map(|&(node, rule)| Candidate { node, rule: Some(rule) }).collect();
                    let selected: Vec<NodeId> = step.fired.iter().map(|f| f.0).collect();
                    ledger.update(&candidates, &selected);
                    max_wait = max_wait.max(ledger.max_waiting());
                    if max_wait > header.fair_cap {
                        return Err(invalid(format!("step {steps}: a node waited {max_wait} steps, cap is {}", header.fair_cap)));
                    }
                }
                cfg = apply_step(header.protocol, &topo, &cfg, &step.fired, &writes);
                if snapshotter.snapshot(&cfg) != step.snapshot {
                    return Err(invalid(format!("step {steps}: recorded state differs from replay")));
                }
                builder.observe(&cfg);
                steps += 1;
            }
            Record::Summary(s) => recorded_summary = Some(s),
            Record::Header(_) => return Err(invalid("second header record")),
            Record::Digest { .. } => return Err(invalid("digest record before the end")),
        }
    }
    let recorded = recorded_summary.ok_or_else(|| invalid("missing summary record"))?;
    let terminated = byzantine.is_empty()
        && topo
            .nodes()
            .all(|v| header.protocol.enabled_rule(&topo, &cfg, v).is_none());
    if !terminated && steps != header.max_steps {
        return Err(invalid(format!("run stopped after {steps} of {} steps without terminating", header.max_steps)));
    }
    if header.schedule_byzantine {
        max_wait = recorded.max_fairness_wait;
    }
    let replayed = builder.finish(&cfg, terminated, max_wait);
    if replayed != recorded {
        return Err(invalid("summary does not match the replayed run"));
    }
    Ok(ValidationReport { steps, n: topo.node_count(), byzantine: header.byzantine, summary: replayed })
}

fn parse_writes(
    topo: &Topology,
    byzantine: &BTreeSet<NodeId>,
    lines: &[String],
) -> std::result::Result<BTreeMap<NodeId, ProcessorState>, String> {
    let mut out = BTreeMap::new();
    for line in lines {
        let (b, st) = parse_state_line(line)?;
        if !byzantine.contains(&b) {
            return Err(format!("write to non-Byzantine node {b}"));
        }
        if !st.is_valid_for(topo, b) {
            return Err(format!("out-of-domain write {line:?}"));
        }
        if out.insert(b, st).is_some() {
            return Err(format!("two writes to node {b}"));
        }
    }
    Ok(out)
}

fn check_selection(
    topo: &Topology,
    header: &Header,
    enabled: &[(NodeId, Rule)],
    fired: &[(NodeId, Rule)],
    writes: &BTreeMap<NodeId, ProcessorState>,
) -> std::result::Result<(), String> {
    for f in fired {
        if !enabled.contains(f) {
            return Err(format!("node {} fired {} which is not its enabled rule", f.0, f.1));
        }
    }
    let mut moved: Vec<NodeId> = fired.iter().map(|f| f.0).collect();
    if header.schedule_byzantine {
        moved.extend(writes.keys());
    }
    if !is_independent(topo, &moved) {
        return Err("two neighbors moved in the same step".into());
    }
    if !header.schedule_byzantine && !enabled.is_empty() && fired.is_empty() {
        return Err("daemon selected nobody while correct nodes were enabled".into());
    }
    if header.schedule_byzantine && moved.is_empty() && !enabled.is_empty() {
        return Err("daemon selected nobody while correct nodes were enabled".into());
    }
    Ok(())
}
