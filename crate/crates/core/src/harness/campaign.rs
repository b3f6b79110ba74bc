//! Many runs of one configuration, in parallel, with aggregate statistics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::Configuration;
use crate::verifier::MatchingTally;

use super::config::{InitSpec, RunConfig};
use super::run::{initial_configuration, run_summary, Summary};

/// Above this many runs an exhaustive-init campaign is refused.
pub const MAX_CAMPAIGN_RUNS: u64 = 5_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    /// Mixed-radix index of the initial configuration, for exhaustive inits.
    pub initial_index: Option<u64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    /// Worst `contained_since` over converged runs.
    pub max_steps_to_containment: Option<u64>,
    pub closure_violations_1: usize,
    pub closure_violations_2: usize,
    pub closure_violations: usize,
    pub max_fairness_wait: usize,
    pub matching: MatchingTally,
}

impl Aggregate {
    pub fn from_runs(runs: &[RunRecord]) -> Self {
        let mut agg = Aggregate { runs: runs.len(), ..Aggregate::default() };
        for r in runs {
            let s = &r.summary;
            if s.converged {
                agg.converged += 1;
                agg.max_steps_to_containment = agg.max_steps_to_containment.max(s.contained_since);
            }
            agg.closure_violations_1 += s.closure_violation_1.is_some() as usize;
            agg.closure_violations_2 += s.closure_violation_2.is_some() as usize;
            agg.closure_violations += s.closure_violation.is_some() as usize;
            agg.max_fairness_wait = agg.max_fairness_wait.max(s.max_fairness_wait);
            agg.matching.merge(&s.matching);
        }
        agg.convergence_rate = if runs.is_empty() { 0.0 } else { agg.converged as f64 / runs.len() as f64 };
        agg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub aggregate: Aggregate,
    pub runs: Vec<RunRecord>,
}

/// Runs seeds `config.seed .. config.seed + num_seeds`. With an exhaustive
/// init, every in-domain initial configuration is run under every seed.
pub fn campaign(config: &RunConfig, num_seeds: u64) -> Result<CampaignReport> {
    config.validate()?;
    if num_seeds == 0 {
        return Err(Error::Usage("a campaign needs at least one seed".into()));
    }
    let seeds: Vec<u64> = (0..num_seeds).map(|i| config.seed.wrapping_add(i)).collect();
    let runs: Vec<RunRecord> = if config.init == InitSpec::Exhaustive {
        let topo = &config.topology;
        let total = Configuration::count(topo)
            .and_then(|c| c.checked_mul(num_seeds))
            .filter(|&t| t <= MAX_CAMPAIGN_RUNS)
            .ok_or_else(|| Error::Usage(format!("exhaustive campaign exceeds {MAX_CAMPAIGN_RUNS} runs")))?;
        (0..total)
            .into_par_iter()
            .map(|k| {
                let seed = seeds[(k % num_seeds) as usize];
                let index = k / num_seeds;
                let run = config.with_seed(seed);
                let summary = run_summary(&run, Configuration::from_index(topo, index))?;
                Ok(RunRecord { seed, initial_index: Some(index), summary })
            })
            .collect::<Result<_>>()?
    } else {
        seeds
            .par_iter()
            .map(|&seed| {
                let run = config.with_seed(seed);
                let summary = run_summary(&run, initial_configuration(&run)?)?;
                Ok(RunRecord { seed, initial_index: None, summary })
            })
            .collect::<Result<_>>()?
    };
    Ok(CampaignReport { aggregate: Aggregate::from_runs(&runs), runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{FaultModel, Strategy};
    use crate::topology::{GeneratorSpec, NodeId, Topology};

    #[test]
    fn exhaustive_campaign_covers_every_configuration() {
        let p3 = Topology::generate(&GeneratorSpec::Path(3), 0).unwrap();
        let mut cfg = RunConfig::new(p3.clone());
        cfg.init = InitSpec::Exhaustive;
        let report = campaign(&cfg, 2).unwrap();
        assert_eq!(report.aggregate.runs, 48);
        assert_eq!(report.aggregate.converged, 48);
        assert_eq!(report.aggregate.convergence_rate, 1.0);
        assert!(report.aggregate.matching.clean());
    }

    #[test]
    fn campaigns_are_deterministic() {
        let ring = Topology::generate(&GeneratorSpec::Ring(5), 0).unwrap();
        let mut cfg = RunConfig::new(ring.clone());
        cfg.faults = FaultModel::uniform(&ring, &[NodeId(2)], Strategy::Random { seed: 1 }).unwrap();
        cfg.max_steps = 300;
        let a = campaign(&cfg, 8).unwrap();
        let b = campaign(&cfg, 8).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
        let sa: Vec<_> = a.runs.iter().map(|r| &r.summary).collect();
        let sb: Vec<_> = b.runs.iter().map(|r| &r.summary).collect();
        assert_eq!(sa, sb);
        assert_eq!(a.aggregate.closure_violations_2, 0);
    }
}
