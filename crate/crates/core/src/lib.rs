//! Simulation and verification toolkit for a self-stabilizing maximal
//! matching protocol that contains the effect of Byzantine processors within
//! distance 2.
//!
//! - [`topology`]: static graphs, generators and the edge-list format.
//! - [`protocol`]: processor state, status predicates and the M/S/A rules.
//! - [`scheduler`]: locally central, strongly fair daemons.
//! - [`adversary`]: Byzantine strategies.
//! - [`verifier`]: containment, `G*` matching checks, closure, potential.
//! - [`explorer`]: exhaustive transition graphs for tiny instances.
//! - [`harness`]: runs, campaigns, traces and the CLI.

pub mod adversary;
pub mod error;
pub mod explorer;
pub mod harness;
pub mod protocol;
pub mod scheduler;
pub mod topology;
pub mod verifier;

pub use error::{Error, Result};
