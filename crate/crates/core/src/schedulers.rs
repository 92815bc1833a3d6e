//! Server-side job-assignment strategies.
//!
//! A strategy decides the initial job set and, after every received gradient,
//! which workers get new jobs and at which model index. The engine treats all
//! strategies through [`Strategy`].

use std::fmt;
use std::str::FromStr;

use crate::engine::Job;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShuffleMode {
    /// Resample the worker permutation after every full cycle.
    EveryCycle,
    /// Sample one permutation and reuse it.
    Once,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReshuffleMode {
    EveryEpoch,
    Once,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategySpec {
    Pure,
    PureWaiting { b: usize },
    Random,
    RandomWaiting { b: usize },
    Shuffled { mode: ShuffleMode },
    MiniBatch { b: usize },
    Reshuffling { mode: ReshuffleMode },
}

impl StrategySpec {
    /// Updates per model step: waiting and mini-batch variants split the
    /// step `gamma` into `b` sub-updates of `gamma / b`.
    pub fn step_divisor(&self) -> usize {
        match *self {
            StrategySpec::PureWaiting { b } | StrategySpec::RandomWaiting { b } | StrategySpec::MiniBatch { b } => b,
            _ => 1,
        }
    }

    /// Reductions of single-node methods run with zero compute time.
    pub fn is_sequential(&self) -> bool {
        matches!(self, StrategySpec::MiniBatch { .. } | StrategySpec::Reshuffling { .. })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            StrategySpec::PureWaiting { b } | StrategySpec::RandomWaiting { b } | StrategySpec::MiniBatch { b }
                if (b == 0 || b > n) =>
            {
                return Err(Error::Config(format!("{self}: b must lie in [1, {n}]")));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build(&self, n: usize) -> Result<Box<dyn Strategy>> {
        self.validate(n)?;
        Ok(match *self {
            StrategySpec::Pure => Box::new(PureAsync),
            StrategySpec::PureWaiting { b } => Box::new(PureWaiting::new(b)),
            StrategySpec::Random => Box::new(RandomAsync { n }),
            StrategySpec::RandomWaiting { b } => Box::new(RandomWaiting::new(n, b)),
            StrategySpec::Shuffled { mode } => Box::new(Shuffled::new(n, mode)),
            StrategySpec::MiniBatch { b } => Box::new(MiniBatch::new(n, b)),
            StrategySpec::Reshuffling { mode } => Box::new(Reshuffling::new(n, mode)),
        })
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Pure => write!(f, "pure"),
            StrategySpec::PureWaiting { b } => write!(f, "pure-wait:b={b}"),
            StrategySpec::Random => write!(f, "random"),
            StrategySpec::RandomWaiting { b } => write!(f, "random-wait:b={b}"),
            StrategySpec::Shuffled {
                mode: ShuffleMode::EveryCycle,
            } => write!(f, "shuffled:mode=cycle"),
            StrategySpec::Shuffled {
                mode: ShuffleMode::Once,
            } => write!(f, "shuffled:mode=once"),
            StrategySpec::MiniBatch { b } => write!(f, "minibatch:b={b}"),
            StrategySpec::Reshuffling {
                mode: ReshuffleMode::EveryEpoch,
            } => write!(f, "rr:mode=epoch"),
            StrategySpec::Reshuffling {
                mode: ReshuffleMode::Once,
            } => write!(f, "rr:mode=once"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("strategy {s:?}: {msg}"));
        let (name, args) = match s.trim().split_once(':') {
            Some((name, args)) => (name, Some(args)),
            None => (s.trim(), None),
        };
        let arg = |key: &str| -> Result<Option<&str>> {
            match args {
                None => Ok(None),
                Some(a) => match a.split_once('=') {
                    Some((k, v)) if k.trim() == key => Ok(Some(v.trim())),
                    _ => Err(bad(&format!("expected `{key}=...`"))),
                },
            }
        };
        let batch = || -> Result<usize> {
            arg("b")?
                .ok_or_else(|| bad("missing b=<count>"))?
                .parse()
                .map_err(|_| bad("b must be a positive integer"))
        };
        let no_args = |spec: StrategySpec| match args {
            None => Ok(spec),
            Some(_) => Err(bad("takes no arguments")),
        };
        match name {
            "pure" => no_args(StrategySpec::Pure),
            "random" => no_args(StrategySpec::Random),
            "pure-wait" => Ok(StrategySpec::PureWaiting { b: batch()? }),
            "random-wait" => Ok(StrategySpec::RandomWaiting { b: batch()? }),
            "minibatch" => Ok(StrategySpec::MiniBatch { b: batch()? }),
            "shuffled" => match arg("mode")? {
                None | Some("cycle") => Ok(StrategySpec::Shuffled {
                    mode: ShuffleMode::EveryCycle,
                }),
                Some("once") => Ok(StrategySpec::Shuffled {
                    mode: ShuffleMode::Once,
                }),
                Some(_) => Err(bad("mode must be cycle or once")),
            },
            "rr" => match arg("mode")? {
                None | Some("epoch") => Ok(StrategySpec::Reshuffling {
                    mode: ReshuffleMode::EveryEpoch,
                }),
                Some("once") => Ok(StrategySpec::Reshuffling {
                    mode: ReshuffleMode::Once,
                }),
                Some(_) => Err(bad("mode must be epoch or once")),
            },
            _ => Err(bad("unknown strategy")),
        }
    }
}

/// A new job request: `worker` computes a gradient at `x_{model_index}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub worker: usize,
    pub model_index: usize,
}

impl Assignment {
    pub fn new(worker: usize, model_index: usize) -> Self {
        Self { worker, model_index }
    }
}

pub trait Strategy: Send {
    /// Workers that receive a job at `x_0` before the first iteration.
    fn initial(&mut self, n: usize, rng: &mut RandomStream) -> Vec<usize>;

    /// Called once per received job, in receipt order, after `x_{t+1}` has
    /// been computed at iteration `t`.
    fn on_receive(&mut self, completed: &Job, t: usize, rng: &mut RandomStream) -> Result<Vec<Assignment>>;
}

#[derive(Debug, Default)]
pub struct PureAsync;

impl Strategy for PureAsync {
    fn initial(&mut self, n: usize, _rng: &mut RandomStream) -> Vec<usize> {
        (0..n).collect()
    }

    fn on_receive(&mut self, completed: &Job, t: usize, _rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        Ok(vec![Assignment::new(completed.worker, t + 1)])
    }
}

fn push_checked(buffer: &mut Vec<usize>, worker: usize, b: usize) -> Result<bool> {
    buffer.push(worker);
    if buffer.len() > b {
        return Err(Error::Invariant(format!(
            "waiting buffer holds {} > b = {b} receipts",
            buffer.len()
        )));
    }
    Ok(buffer.len() == b)
}

#[derive(Debug)]
pub struct PureWaiting {
    b: usize,
    buffer: Vec<usize>,
}

impl PureWaiting {
    pub fn new(b: usize) -> Self {
        Self {
            b,
            buffer: Vec::with_capacity(b),
        }
    }
}

impl Strategy for PureWaiting {
    fn initial(&mut self, n: usize, _rng: &mut RandomStream) -> Vec<usize> {
        (0..n).collect()
    }

    fn on_receive(&mut self, completed: &Job, t: usize, _rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        if !push_checked(&mut self.buffer, completed.worker, self.b)? {
            return Ok(Vec::new());
        }
        let alpha = (t + 1) / self.b * self.b;
        Ok(self.buffer.drain(..).map(|w| Assignment::new(w, alpha)).collect())
    }
}

#[derive(Debug)]
pub struct RandomAsync {
    n: usize,
}

impl Strategy for RandomAsync {
    fn initial(&mut self, n: usize, _rng: &mut RandomStream) -> Vec<usize> {
        (0..n).collect()
    }

    fn on_receive(&mut self, _completed: &Job, t: usize, rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        Ok(vec![Assignment::new(rng.index(self.n), t + 1)])
    }
}

/// Buffered aggregation with one local step: wait for `b` gradients, then
/// hand `b` independently drawn workers (repeats allowed) the new model.
#[derive(Debug)]
pub struct RandomWaiting {
    n: usize,
    b: usize,
    received: usize,
}

impl RandomWaiting {
    pub fn new(n: usize, b: usize) -> Self {
        Self { n, b, received: 0 }
    }
}

impl Strategy for RandomWaiting {
    fn initial(&mut self, n: usize, _rng: &mut RandomStream) -> Vec<usize> {
        (0..n).collect()
    }

    fn on_receive(&mut self, _completed: &Job, t: usize, rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        self.received += 1;
        if self.received > self.b {
            return Err(Error::Invariant(format!(
                "waiting buffer holds {} > b = {} receipts",
                self.received, self.b
            )));
        }
        if self.received < self.b {
            return Ok(Vec::new());
        }
        self.received = 0;
        let alpha = (t + 1) / self.b * self.b;
        Ok((0..self.b).map(|_| Assignment::new(rng.index(self.n), alpha)).collect())
    }
}

#[derive(Debug)]
pub struct Shuffled {
    n: usize,
    mode: ShuffleMode,
    perm: Vec<usize>,
    cursor: usize,
}

impl Shuffled {
    pub fn new(n: usize, mode: ShuffleMode) -> Self {
        Self {
            n,
            mode,
            perm: Vec::new(),
            cursor: 0,
        }
    }

    /// Start from a given first-cycle permutation instead of sampling one.
    pub fn with_permutation(perm: Vec<usize>, mode: ShuffleMode) -> Self {
        Self {
            n: perm.len(),
            mode,
            perm,
            cursor: 0,
        }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}

impl Strategy for Shuffled {
    fn initial(&mut self, n: usize, rng: &mut RandomStream) -> Vec<usize> {
        if self.perm.is_empty() {
            self.perm = rng.permutation(self.n);
        }
        (0..n).collect()
    }

    fn on_receive(&mut self, _completed: &Job, t: usize, rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        if self.perm.is_empty() {
            self.perm = rng.permutation(self.n);
        }
        let worker = self.perm[self.cursor];
        self.cursor += 1;
        if self.cursor == self.n {
            self.cursor = 0;
            if self.mode == ShuffleMode::EveryCycle {
                self.perm = rng.permutation(self.n);
            }
        }
        Ok(vec![Assignment::new(worker, t + 1)])
    }
}

/// Mini-batch SGD with every worker standing for one data point: a batch of
/// `b` distinct workers shares one model index, and the next batch is drawn
/// only after all `b` gradients arrive.
#[derive(Debug)]
pub struct MiniBatch {
    n: usize,
    b: usize,
    outstanding: usize,
}

impl MiniBatch {
    pub fn new(n: usize, b: usize) -> Self {
        Self { n, b, outstanding: 0 }
    }
}

impl Strategy for MiniBatch {
    fn initial(&mut self, _n: usize, rng: &mut RandomStream) -> Vec<usize> {
        self.outstanding = self.b;
        rng.sample_without_replacement(self.n, self.b)
    }

    fn on_receive(&mut self, _completed: &Job, t: usize, rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        if self.outstanding == 0 {
            return Err(Error::Invariant("mini-batch receipt with no outstanding job".into()));
        }
        self.outstanding -= 1;
        if self.outstanding > 0 {
            return Ok(Vec::new());
        }
        self.outstanding = self.b;
        Ok(rng
            .sample_without_replacement(self.n, self.b)
            .into_iter()
            .map(|w| Assignment::new(w, t + 1))
            .collect())
    }
}

/// Sequential SGD over data points in epoch-permutation order; exactly one
/// job is in flight at any time.
#[derive(Debug)]
pub struct Reshuffling {
    n: usize,
    mode: ReshuffleMode,
    perm: Vec<usize>,
    cursor: usize,
}

impl Reshuffling {
    pub fn new(n: usize, mode: ReshuffleMode) -> Self {
        Self {
            n,
            mode,
            perm: Vec::new(),
            cursor: 0,
        }
    }

    fn next_worker(&mut self, rng: &mut RandomStream) -> usize {
        if self.cursor == self.n {
            self.cursor = 0;
            if self.mode == ReshuffleMode::EveryEpoch {
                self.perm = rng.permutation(self.n);
            }
        }
        let w = self.perm[self.cursor];
        self.cursor += 1;
        w
    }
}

impl Strategy for Reshuffling {
    fn initial(&mut self, _n: usize, rng: &mut RandomStream) -> Vec<usize> {
        self.perm = rng.permutation(self.n);
        self.cursor = 0;
        vec![self.next_worker(rng)]
    }

    fn on_receive(&mut self, _completed: &Job, t: usize, rng: &mut RandomStream) -> Result<Vec<Assignment>> {
        Ok(vec![Assignment::new(self.next_worker(rng), t + 1)])
    }
}
