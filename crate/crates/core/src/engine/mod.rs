//! Discrete-event server loop.
//!
//! Workers compute gradients at (possibly stale) models; the server applies
//! each gradient as soon as it arrives, `x_{t+1} = x_t - step * g`, and asks
//! the strategy for new jobs. Completions are ordered by `(time, worker,
//! job_id)`. A gradient is realized (its stochastic sample fixed) the moment
//! its job is assigned, so every in-flight job has a well-defined `g_i(x_j)`.
//!
//! Ledger conventions: the initial jobs form `A_1`; a job assigned during
//! iteration `t` enters `A_{t+2}`; a job received at iteration `t` enters
//! `R_{t+1}`.

mod timing;
mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

pub use timing::{sample_compute_time, TimingKind, TimingModel, MIN_DURATION};
pub use trace::{IterationRecord, JobRecord, RunStatus, Trace};

use crate::error::{Error, Result};
use crate::objective::{Objective, ParamVector};
use crate::rng::{stream, RandomStream};
use crate::schedulers::{Assignment, Strategy, StrategySpec};

/// `||x||` above which a run is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Instruction for `worker` to compute a gradient at `x_{model_index}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Job {
    pub worker: usize,
    pub model_index: usize,
    pub job_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Samples(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: StrategySpec,
    pub gamma: f64,
    pub iterations: usize,
    pub batch: BatchSize,
    pub timing: TimingModel,
    pub seed: u64,
    /// Keep `x_t` for every `t` divisible by this; 0 keeps none.
    pub snapshot_every: usize,
    /// Evaluate `f(x_t)` and `||grad f(x_t)||^2` every this many steps; 0 never.
    pub metric_every: usize,
    pub keep_job_gradients: bool,
}

impl RunConfig {
    pub fn new(strategy: StrategySpec, gamma: f64, iterations: usize, timing: TimingModel, seed: u64) -> Self {
        Self {
            strategy,
            gamma,
            iterations,
            batch: BatchSize::Full,
            timing,
            seed,
            snapshot_every: 1,
            metric_every: 1,
            keep_job_gradients: true,
        }
    }

    pub fn validate(&self, obj: &Objective<'_>) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("stepsize must be positive, got {}", self.gamma)));
        }
        let n = obj.n();
        self.strategy.validate(n)?;
        if self.timing.speeds.len() != n {
            return Err(Error::Config(format!(
                "timing model has {} speeds for {n} workers",
                self.timing.speeds.len()
            )));
        }
        if let BatchSize::Samples(b) = self.batch {
            if b == 0 || b > obj.data().m() {
                return Err(Error::Config(format!("batch size {b} outside [1, {}]", obj.data().m())));
            }
        }
        Ok(())
    }

    /// Per-gradient stepsize actually applied by the server.
    pub fn step_size(&self) -> f64 {
        self.gamma / self.strategy.step_divisor() as f64
    }
}

#[derive(Debug)]
struct CompletionEvent {
    time: f64,
    job: Job,
    gradient: ParamVector,
}

impl CompletionEvent {
    fn key(&self) -> (f64, usize, u64) {
        (self.time, self.job.worker, self.job.job_id)
    }
}

impl PartialEq for CompletionEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CompletionEvent {}

impl PartialOrd for CompletionEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CompletionEvent {
    // Reversed so that `BinaryHeap` pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, wa, ja) = self.key();
        let (tb, wb, jb) = other.key();
        tb.total_cmp(&ta).then(wb.cmp(&wa)).then(jb.cmp(&ja))
    }
}

pub struct SimState<'a> {
    obj: Objective<'a>,
    cfg: RunConfig,
    step_size: f64,
    strategy: Box<dyn Strategy>,
    x: ParamVector,
    t: usize,
    time: f64,
    queue: BinaryHeap<CompletionEvent>,
    worker_free_at: Vec<f64>,
    in_flight: usize,
    timing_rng: RandomStream,
    strategy_rng: RandomStream,
    gradient_rng: RandomStream,
    // Models a future assignment may still reference: everything when
    // snapshots are dense, otherwise a sliding window of the last n + 1.
    history: VecDeque<ParamVector>,
    history_base: usize,
    history_cap: Option<usize>,
    trace: Trace,
}

/// Set up `x_0`, the initial job set and its completion events.
pub fn init_run<'a>(obj: Objective<'a>, cfg: &RunConfig) -> Result<SimState<'a>> {
    let strategy = cfg.strategy.build(obj.n())?;
    init_with_strategy(obj, cfg, strategy)
}

/// As [`init_run`] with a caller-supplied strategy object.
pub fn init_with_strategy<'a>(
    obj: Objective<'a>,
    cfg: &RunConfig,
    mut strategy: Box<dyn Strategy>,
) -> Result<SimState<'a>> {
    cfg.validate(&obj)?;
    let n = obj.n();
    let root = RandomStream::new(cfg.seed);
    let mut init_rng = root.fork(stream::INIT);
    let x0 = ParamVector::standard_normal(obj.dim(), &mut init_rng);
    let mut strategy_rng = root.fork(stream::STRATEGY);
    let initial = strategy.initial(n, &mut strategy_rng);
    if initial.is_empty() {
        return Err(Error::Config(format!(
            "strategy {} assigned no initial jobs",
            cfg.strategy
        )));
    }

    let trace = Trace::new(n, obj.dim(), cfg, x0.clone());
    let mut state = SimState {
        obj,
        step_size: cfg.step_size(),
        cfg: cfg.clone(),
        strategy,
        x: x0.clone(),
        t: 0,
        time: 0.0,
        queue: BinaryHeap::new(),
        worker_free_at: vec![0.0; n],
        in_flight: 0,
        timing_rng: root.fork(stream::TIMING),
        strategy_rng,
        gradient_rng: root.fork(stream::GRADIENT),
        history: VecDeque::from([x0.clone()]),
        history_base: 0,
        history_cap: (cfg.snapshot_every != 1).then_some(n + 1),
        trace,
    };
    if cfg.snapshot_every > 0 {
        state.trace.snapshots.push(x0);
    }
    for worker in initial {
        if worker >= n {
            return Err(Error::Contract(format!("initial job for worker {worker} >= n = {n}")));
        }
        state.assign(Assignment::new(worker, 0), None)?;
    }
    state.trace.max_in_flight = state.in_flight;
    Ok(state)
}

impl<'a> SimState<'a> {
    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn x(&self) -> &ParamVector {
        &self.x
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    fn model_at(&self, index: usize) -> Result<&ParamVector> {
        index
            .checked_sub(self.history_base)
            .and_then(|k| self.history.get(k))
            .ok_or_else(|| {
                Error::Contract(format!(
                    "job requested at x_{index} but only x_{}..=x_{} are retained",
                    self.history_base, self.t
                ))
            })
    }

    fn realize_gradient(&mut self, worker: usize, model_index: usize) -> Result<ParamVector> {
        let obj = self.obj;
        let batch = self.cfg.batch;
        let x = self.model_at(model_index)?;
        match batch {
            BatchSize::Full => obj.local_grad(x, worker),
            BatchSize::Samples(b) => {
                let x = x.clone();
                obj.stochastic_grad(&x, worker, b, &mut self.gradient_rng)
            }
        }
    }

    /// Ledger entry, gradient realization and completion event for one job.
    /// `during` is the iteration in which the job is assigned (`None` for the
    /// initial set).
    fn assign(&mut self, a: Assignment, during: Option<usize>) -> Result<()> {
        let n = self.obj.n();
        if a.worker >= n {
            return Err(Error::Contract(format!("assignment to worker {} >= n = {n}", a.worker)));
        }
        if a.model_index > self.t {
            return Err(Error::Contract(format!(
                "assignment at model index {} beyond the newest model x_{}",
                a.model_index, self.t
            )));
        }
        let gradient = self.realize_gradient(a.worker, a.model_index)?;
        let duration = if self.cfg.strategy.is_sequential() {
            0.0
        } else {
            self.cfg.timing.sample(a.worker, &mut self.timing_rng)
        };
        let start = self.time.max(self.worker_free_at[a.worker]);
        let finish = start + duration;
        self.worker_free_at[a.worker] = finish;

        let job = Job {
            worker: a.worker,
            model_index: a.model_index,
            job_id: self.trace.jobs.len() as u64,
        };
        self.trace.jobs.push(JobRecord {
            job,
            assigned_step: during,
            received_step: None,
        });
        if self.cfg.keep_job_gradients {
            self.trace.job_gradients.push(gradient.clone());
        }
        self.queue.push(CompletionEvent {
            time: finish,
            job,
            gradient,
        });
        self.in_flight += 1;
        Ok(())
    }

    /// One server iteration: receive the earliest completion, update the
    /// model, then let the strategy hand out new jobs.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let ev = self
            .queue
            .pop()
            .ok_or_else(|| Error::Invariant(format!("event queue empty at iteration {}", self.t)))?;
        if ev.time < self.time {
            return Err(Error::Invariant(format!(
                "event at {} precedes clock {}",
                ev.time, self.time
            )));
        }
        self.time = ev.time;
        let t = self.t;

        let metrics = if self.cfg.metric_every > 0 && t.is_multiple_of(self.cfg.metric_every) {
            Some(self.obj.loss_and_grad_norm_sq(&self.x)?)
        } else {
            None
        };

        for (xi, gi) in self.x.iter_mut().zip(ev.gradient.iter()) {
            *xi -= self.step_size * gi;
        }
        let record = &mut self.trace.jobs[ev.job.job_id as usize];
        if record.received_step.is_some() {
            return Err(Error::Invariant(format!("job {} received twice", ev.job.job_id)));
        }
        record.received_step = Some(t);
        self.in_flight -= 1;
        self.t += 1;
        self.history.push_back(self.x.clone());
        if let Some(cap) = self.history_cap {
            while self.history.len() > cap {
                self.history.pop_front();
                self.history_base += 1;
            }
        }

        let norm = self.x.norm();
        let diverged = norm.is_nan() || norm > DIVERGENCE_NORM;
        let mut assigned = Vec::new();
        if !diverged {
            let out = self.strategy.on_receive(&ev.job, t, &mut self.strategy_rng)?;
            for a in out {
                if a.model_index > t + 1 {
                    return Err(Error::Contract(format!(
                        "strategy assigned model index {} at iteration {t} (max {})",
                        a.model_index,
                        t + 1
                    )));
                }
                self.assign(a, Some(t))?;
                assigned.push(a);
            }
        }

        if self.cfg.snapshot_every > 0 && self.t.is_multiple_of(self.cfg.snapshot_every) {
            self.trace.snapshots.push(self.x.clone());
        }
        self.trace.max_in_flight = self.trace.max_in_flight.max(self.in_flight);
        if diverged {
            self.trace.status = RunStatus::Diverged { iteration: t };
        }
        self.trace.records.push(IterationRecord {
            t,
            time: self.time,
            worker: ev.job.worker,
            model_index: ev.job.model_index,
            delay: t - ev.job.model_index,
            assigned,
            loss: metrics.map(|m| m.0),
            grad_norm_sq: metrics.map(|m| m.1),
        });
        Ok(self.trace.records.last().unwrap())
    }

    pub fn finish(mut self) -> Trace {
        self.trace.final_x = self.x;
        self.trace.unfinished = self
            .trace
            .jobs
            .iter()
            .filter(|j| j.received_step.is_none())
            .map(|j| j.job)
            .collect();
        self.trace
    }
}

/// Run `cfg.iterations` server iterations (fewer if the model diverges).
pub fn run(obj: Objective<'_>, cfg: &RunConfig) -> Result<Trace> {
    let mut state = init_run(obj, cfg)?;
    for _ in 0..cfg.iterations {
        state.step()?;
        if state.trace.status != RunStatus::Completed {
            break;
        }
    }
    Ok(state.finish())
}
