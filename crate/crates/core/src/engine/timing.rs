use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Shortest duration a job can take; keeps event times strictly ordered.
pub const MIN_DURATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimingKind {
    /// Always `s_i` seconds.
    Fixed,
    /// `Po(s_i)`.
    Poisson,
    /// `|N(s_i, s_i)| + 1` (second argument is the variance).
    Normal,
    /// `Uni(0, s_i)`.
    Uniform,
}

impl FromStr for TimingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed" => Ok(TimingKind::Fixed),
            "poisson" => Ok(TimingKind::Poisson),
            "normal" => Ok(TimingKind::Normal),
            "uniform" => Ok(TimingKind::Uniform),
            other => Err(Error::Config(format!("unknown timing model {other:?}"))),
        }
    }
}

impl fmt::Display for TimingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimingKind::Fixed => "fixed",
            TimingKind::Poisson => "poisson",
            TimingKind::Normal => "normal",
            TimingKind::Uniform => "uniform",
        })
    }
}

/// Per-worker compute-time law; `speeds[i]` is the nominal seconds per
/// gradient of worker `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingModel {
    pub kind: TimingKind,
    pub speeds: Vec<f64>,
}

impl TimingModel {
    pub fn new(kind: TimingKind, speeds: Vec<f64>) -> Result<Self> {
        if let Some(bad) = speeds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("worker speeds must be positive, got {bad}")));
        }
        Ok(Self { kind, speeds })
    }

    /// `s_i = i + 1`.
    pub fn linear(kind: TimingKind, n: usize) -> Self {
        Self {
            kind,
            speeds: (1..=n).map(|s| s as f64).collect(),
        }
    }

    pub fn sample(&self, worker: usize, rng: &mut RandomStream) -> f64 {
        sample_compute_time(self, worker, rng)
    }
}

pub fn sample_compute_time(model: &TimingModel, worker: usize, rng: &mut RandomStream) -> f64 {
    let s = model.speeds[worker];
    let r = match model.kind {
        TimingKind::Fixed => s,
        TimingKind::Poisson => rng.poisson(s) as f64,
        TimingKind::Normal => rng.normal(s, s).abs() + 1.0,
        TimingKind::Uniform => s * rng.uniform(),
    };
    r.max(MIN_DURATION)
}
