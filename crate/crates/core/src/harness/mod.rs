//! Simulation harness: run configuration, the step engine, traces,
//! campaigns and the command-line front end.

pub mod campaign;
pub mod cli;
pub mod config;
pub mod run;
pub mod trace;

pub use campaign::{campaign, Aggregate, CampaignReport, RunRecord};
pub use config::{ConfigFile, DaemonChoice, InitSpec, RunConfig};
pub use run::{initial_configuration, run_summary, simulate, Runner, StepOutcome, Summary, SummaryBuilder};
pub use trace::{validate, Record, Trace, TraceWriter, ValidationReport};
