//! Post-hoc analysis of traces: delays, concurrency, sequence correlation,
//! delay variance, virtual iterates and explicit-constant bounds.

mod bounds;
mod correlation;
mod delays;
mod report;
mod virtual_iterates;

use std::fmt;
use std::str::FromStr;

pub use bounds::{phi, recommended_stepsize, theorem3_bound, theorem4_bound, StepsizeParams, StepsizeRule};
pub use correlation::{default_tau, delay_variance, sequence_correlation, CorrelationReport};
pub use delays::{delay_stats, in_flight_counts, DelayStats};
pub use report::{diagnose, read_chunk_csv, read_quantity_csv, DiagnoseOptions, Report};
pub use virtual_iterates::{
    assigned_virtual_iterates, replay_iterates, virtual_iterates, AssignedIterates, VirtualIterates,
};

use crate::error::Error;

/// Which index sequence a diagnostic follows: the receipts `(i_t, pi_t)` or
/// the assignments `(k_t, alpha_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Process {
    Received,
    Assigned,
}

impl FromStr for Process {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "received" => Ok(Process::Received),
            "assigned" => Ok(Process::Assigned),
            other => Err(Error::param(format!("unknown process {other:?}"))),
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Process::Received => "received",
            Process::Assigned => "assigned",
        })
    }
}
