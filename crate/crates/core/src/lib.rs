//! Deterministic discrete-event simulation of asynchronous SGD with
//! pluggable job-assignment strategies, and diagnostics for the delay and
//! correlation quantities that govern its convergence.

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod schedulers;

pub use data::{generate_synthetic, load_libsvm, Dataset, SynConfig};
pub use diagnostics::{delay_stats, DelayStats, Process};
pub use engine::{run, BatchSize, Job, RunConfig, RunStatus, TimingKind, TimingModel, Trace};
pub use error::{Error, Result};
pub use experiment::{run_sweep, SweepConfig, SweepResult, DEFAULT_GRID};
pub use objective::{Objective, ParamVector};
pub use rng::RandomStream;
pub use schedulers::{Assignment, Strategy, StrategySpec};
