use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Job, RunConfig};
use crate::data::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::objective::ParamVector;
use crate::schedulers::Assignment;

/// Files making up a run bundle directory.
pub const BUNDLE_FILES: [&str; 6] = [
    "run.manifest",
    "trace.csv",
    "jobs.csv",
    "models.bin",
    "snapshots.bin",
    "job_grads.bin",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// `||x||` exceeded the divergence threshold (or became non-finite) at this iteration.
    Diverged {
        iteration: usize,
    },
}

/// One server iteration `t`: the job received (`i_t`, `pi_t`), and the
/// assignments the strategy made in response.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub time: f64,
    pub worker: usize,
    pub model_index: usize,
    pub delay: usize,
    pub assigned: Vec<Assignment>,
    /// `f(x_t)`, when metrics were due at `t`.
    pub loss: Option<f64>,
    /// `||grad f(x_t)||^2`, when metrics were due at `t`.
    pub grad_norm_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobRecord {
    pub job: Job,
    /// Iteration during which the job was handed out; `None` for initial jobs.
    pub assigned_step: Option<usize>,
    pub received_step: Option<usize>,
}

impl JobRecord {
    /// Index `s` of the ledger `A_s` the job first belongs to.
    pub fn ledger_index(&self) -> usize {
        self.assigned_step.map_or(1, |s| s + 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n: usize,
    pub d: usize,
    pub strategy: String,
    pub gamma: f64,
    pub step_size: f64,
    pub seed: u64,
    pub snapshot_every: usize,
    pub metric_every: usize,
    pub x0: ParamVector,
    pub final_x: ParamVector,
    pub records: Vec<IterationRecord>,
    /// `x_t` for every `t` divisible by `snapshot_every`, starting at `x_0`.
    pub snapshots: Vec<ParamVector>,
    /// Realized gradient of every job, indexed by `job_id`; empty when not kept.
    pub job_gradients: Vec<ParamVector>,
    /// Every job ever assigned, indexed by `job_id`.
    pub jobs: Vec<JobRecord>,
    /// Jobs still in flight when the run stopped.
    pub unfinished: Vec<Job>,
    pub max_in_flight: usize,
    pub status: RunStatus,
}

impl Trace {
    pub(super) fn new(n: usize, d: usize, cfg: &RunConfig, x0: ParamVector) -> Self {
        Self {
            n,
            d,
            strategy: cfg.strategy.to_string(),
            gamma: cfg.gamma,
            step_size: cfg.step_size(),
            seed: cfg.seed,
            snapshot_every: cfg.snapshot_every,
            metric_every: cfg.metric_every,
            final_x: x0.clone(),
            x0,
            records: Vec::new(),
            snapshots: Vec::new(),
            job_gradients: Vec::new(),
            jobs: Vec::new(),
            unfinished: Vec::new(),
            max_in_flight: 0,
            status: RunStatus::Completed,
        }
    }

    /// Build a trace from a bare job ledger, e.g. one written by hand.
    /// Receipt steps must cover `0..T` exactly once each; iteration records
    /// (with `time = t`) and the unfinished set are derived from it.
    pub fn from_ledger(n: usize, d: usize, jobs: Vec<JobRecord>) -> Result<Self> {
        let mut by_step: Vec<Option<Job>> = Vec::new();
        for (id, j) in jobs.iter().enumerate() {
            if j.job.job_id as usize != id {
                return Err(Error::Invariant(format!("job {id} carries id {}", j.job.job_id)));
            }
            if let Some(s) = j.received_step {
                if s >= by_step.len() {
                    by_step.resize(s + 1, None);
                }
                if by_step[s].replace(j.job).is_some() {
                    return Err(Error::Invariant(format!("two jobs received at step {s}")));
                }
                if j.assigned_step.is_some_and(|a| a >= s) {
                    return Err(Error::Invariant(format!("job {id} received before it was assigned")));
                }
            }
        }
        let mut assigned: Vec<Vec<Assignment>> = vec![Vec::new(); by_step.len()];
        for j in &jobs {
            if let Some(a) = j.assigned_step {
                if a >= assigned.len() {
                    return Err(Error::Invariant(format!(
                        "job {} assigned after the last receipt",
                        j.job.job_id
                    )));
                }
                assigned[a].push(Assignment::new(j.job.worker, j.job.model_index));
            }
        }
        let mut records = Vec::with_capacity(by_step.len());
        for (t, (job, assigned)) in by_step.into_iter().zip(assigned).enumerate() {
            let job = job.ok_or_else(|| Error::IncompleteTrace(format!("no job received at step {t}")))?;
            if job.model_index > t {
                return Err(Error::Invariant(format!(
                    "job {} received at {t} before its model exists",
                    job.job_id
                )));
            }
            records.push(IterationRecord {
                t,
                time: t as f64,
                worker: job.worker,
                model_index: job.model_index,
                delay: t - job.model_index,
                assigned,
                loss: None,
                grad_norm_sq: None,
            });
        }
        let unfinished = jobs
            .iter()
            .filter(|j| j.received_step.is_none())
            .map(|j| j.job)
            .collect();
        let max_in_flight = crate::diagnostics::in_flight_counts(&jobs, records.len())
            .into_iter()
            .max()
            .unwrap_or(0);
        Ok(Self {
            n,
            d,
            strategy: "ledger".into(),
            gamma: 0.0,
            step_size: 0.0,
            seed: 0,
            snapshot_every: 0,
            metric_every: 0,
            x0: ParamVector::zeros(d),
            final_x: ParamVector::zeros(d),
            records,
            snapshots: Vec::new(),
            job_gradients: Vec::new(),
            jobs,
            unfinished,
            max_in_flight,
            status: RunStatus::Completed,
        })
    }

    /// Number of completed iterations `T`.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn delays(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.delay).collect()
    }

    pub fn workers(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.worker).collect()
    }

    /// `x_t`, if retained.
    pub fn snapshot(&self, t: usize) -> Option<&ParamVector> {
        if self.snapshot_every == 0 || !t.is_multiple_of(self.snapshot_every) {
            return None;
        }
        self.snapshots.get(t / self.snapshot_every)
    }

    /// `(t, ||grad f(x_t)||^2)` for every iteration where metrics were taken.
    pub fn grad_norm_curve(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.grad_norm_sq.map(|g| (r.t, g)))
            .collect()
    }

    /// Per-iteration CSV with header
    /// `t,time,i_t,pi_t,tau_t,k_t,alpha_t,grad_norm_sq,loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,time,i_t,pi_t,tau_t,k_t,alpha_t,grad_norm_sq,loss\n");
        for r in &self.records {
            let ks: Vec<String> = r.assigned.iter().map(|a| a.worker.to_string()).collect();
            let alphas: Vec<String> = r.assigned.iter().map(|a| a.model_index.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{:.16e},{},{},{},{},{},{},{}",
                r.t,
                r.time,
                r.worker,
                r.model_index,
                r.delay,
                ks.join(";"),
                alphas.join(";"),
                fmt_opt(r.grad_norm_sq),
                fmt_opt(r.loss)
            );
        }
        out
    }

    pub fn jobs_csv(&self) -> String {
        let mut out = String::from("job_id,worker,model_index,assigned_step,received_step\n");
        for j in &self.jobs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                j.job.job_id,
                j.job.worker,
                j.job.model_index,
                j.assigned_step.map_or(String::new(), |s| s.to_string()),
                j.received_step.map_or(String::new(), |s| s.to_string())
            );
        }
        out
    }

    fn manifest(&self) -> String {
        let status = match self.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { iteration } => format!("diverged@{iteration}"),
        };
        let mut out = String::new();
        let _ = writeln!(out, "n={}", self.n);
        let _ = writeln!(out, "d={}", self.d);
        let _ = writeln!(out, "strategy={}", self.strategy);
        let _ = writeln!(out, "gamma={:e}", self.gamma);
        let _ = writeln!(out, "step_size={:e}", self.step_size);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "iterations={}", self.records.len());
        let _ = writeln!(out, "snapshot_every={}", self.snapshot_every);
        let _ = writeln!(out, "metric_every={}", self.metric_every);
        let _ = writeln!(out, "max_in_flight={}", self.max_in_flight);
        let _ = writeln!(out, "job_gradients={}", !self.job_gradients.is_empty());
        let _ = writeln!(out, "status={status}");
        out
    }

    /// Write `trace.csv`, `jobs.csv`, `run.manifest`, `models.bin` (x_0 and
    /// the final model), `snapshots.bin` and `job_grads.bin` into `dir`.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("trace.csv"), &self.to_csv())?;
        write_text(&dir.join("jobs.csv"), &self.jobs_csv())?;
        write_text(&dir.join("run.manifest"), &self.manifest())?;
        write_matrix(
            dir.join("models.bin"),
            &[self.x0.0.clone(), self.final_x.0.clone()],
            self.d,
        )?;
        write_matrix(dir.join("snapshots.bin"), &as_rows(&self.snapshots), self.d)?;
        write_matrix(dir.join("job_grads.bin"), &as_rows(&self.job_gradients), self.d)?;
        Ok(())
    }

    pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for part in BUNDLE_FILES {
            if !dir.join(part).is_file() {
                return Err(Error::IncompleteTrace(format!("{} has no {part}", dir.display())));
            }
        }
        let manifest = parse_manifest(&dir.join("run.manifest"))?;
        let get = |k: &str| -> Result<&str> {
            manifest
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::IncompleteTrace(format!("run.manifest lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::IncompleteTrace(format!("run.manifest: bad {k}")))
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::IncompleteTrace(format!("run.manifest: bad {k}")))
        };
        let n = num("n")?;
        let d = num("d")?;
        let status = match get("status")? {
            "completed" => RunStatus::Completed,
            s => match s.strip_prefix("diverged@").and_then(|i| i.parse().ok()) {
                Some(iteration) => RunStatus::Diverged { iteration },
                None => return Err(Error::IncompleteTrace(format!("run.manifest: bad status {s}"))),
            },
        };

        let records = parse_trace_csv(&dir.join("trace.csv"))?;
        let jobs = parse_jobs_csv(&dir.join("jobs.csv"))?;
        let models = read_rows(&dir.join("models.bin"), d)?;
        if models.len() != 2 {
            return Err(Error::IncompleteTrace(
                "models.bin must hold x_0 and the final model".into(),
            ));
        }
        let mut models = models.into_iter();
        let x0 = models.next().unwrap();
        let final_x = models.next().unwrap();
        let snapshots = read_rows(&dir.join("snapshots.bin"), d)?;
        let job_gradients = read_rows(&dir.join("job_grads.bin"), d)?;
        if records.len() != num("iterations")? {
            return Err(Error::IncompleteTrace(format!(
                "trace.csv has {} rows, manifest says {}",
                records.len(),
                num("iterations")?
            )));
        }
        if !job_gradients.is_empty() && job_gradients.len() != jobs.len() {
            return Err(Error::IncompleteTrace(format!(
                "{} job gradients for {} jobs",
                job_gradients.len(),
                jobs.len()
            )));
        }
        let unfinished = jobs
            .iter()
            .filter(|j| j.received_step.is_none())
            .map(|j| j.job)
            .collect();
        Ok(Self {
            n,
            d,
            strategy: get("strategy")?.to_string(),
            gamma: float("gamma")?,
            step_size: float("step_size")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::IncompleteTrace("run.manifest: bad seed".into()))?,
            snapshot_every: num("snapshot_every")?,
            metric_every: num("metric_every")?,
            x0,
            final_x,
            records,
            snapshots,
            job_gradients,
            jobs,
            unfinished,
            max_in_flight: num("max_in_flight")?,
            status,
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.16e}"))
}

fn as_rows(v: &[ParamVector]) -> Vec<Vec<f64>> {
    v.iter().map(|p| p.0.clone()).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, d: usize) -> Result<Vec<ParamVector>> {
    let (rows, dim) = read_matrix(path)?;
    if !rows.is_empty() && dim != d {
        return Err(Error::Dimension { expected: d, got: dim });
    }
    Ok(rows.into_iter().map(ParamVector).collect())
}

fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_text(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("bad {what} {s:?}")))
}

fn opt_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        field(path, line, s, what).map(Some)
    }
}

fn list_field(path: &Path, line: usize, s: &str, what: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|x| field(path, line, x, what)).collect()
}

fn parse_trace_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 9 columns, got {}", cols.len()),
            ));
        }
        let ks = list_field(path, lineno, cols[5], "k_t")?;
        let alphas = list_field(path, lineno, cols[6], "alpha_t")?;
        if ks.len() != alphas.len() {
            return Err(parse_err(path, lineno, "k_t and alpha_t lengths differ"));
        }
        out.push(IterationRecord {
            t: field(path, lineno, cols[0], "t")?,
            time: field(path, lineno, cols[1], "time")?,
            worker: field(path, lineno, cols[2], "i_t")?,
            model_index: field(path, lineno, cols[3], "pi_t")?,
            delay: field(path, lineno, cols[4], "tau_t")?,
            assigned: ks.into_iter().zip(alphas).map(|(k, a)| Assignment::new(k, a)).collect(),
            grad_norm_sq: opt_field(path, lineno, cols[7], "grad_norm_sq")?,
            loss: opt_field(path, lineno, cols[8], "loss")?,
        });
    }
    Ok(out)
}

fn parse_jobs_csv(path: &Path) -> Result<Vec<JobRecord>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 5 columns, got {}", cols.len()),
            ));
        }
        let job_id: u64 = field(path, lineno, cols[0], "job_id")?;
        if job_id as usize != out.len() {
            return Err(parse_err(path, lineno, "job ids must be consecutive from 0"));
        }
        out.push(JobRecord {
            job: Job {
                worker: field(path, lineno, cols[1], "worker")?,
                model_index: field(path, lineno, cols[2], "model_index")?,
                job_id,
            },
            assigned_step: opt_field(path, lineno, cols[3], "assigned_step")?,
            received_step: opt_field(path, lineno, cols[4], "received_step")?,
        });
    }
    Ok(out)
}
