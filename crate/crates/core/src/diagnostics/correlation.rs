use std::collections::HashMap;

use super::Process;
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::objective::{Objective, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub tau: usize,
    pub process: Process,
    /// `sigma^2_{k,tau}` for `k = 0..ceil(T / tau)`, averaged over runs.
    pub sigma_sq_per_chunk: Vec<f64>,
    /// Squared norm of every partial sum `j = 0..tau` inside each chunk,
    /// averaged over runs; chunk `k`'s maximum is `sigma_sq_per_chunk[k]`.
    pub partial_sq: Vec<Vec<f64>>,
    pub nu_sq: f64,
    pub num_runs: usize,
}

impl CorrelationReport {
    pub fn mean_sigma_sq(&self) -> f64 {
        if self.sigma_sq_per_chunk.is_empty() {
            0.0
        } else {
            self.sigma_sq_per_chunk.iter().sum::<f64>() / self.sigma_sq_per_chunk.len() as f64
        }
    }
}

/// Correlation period `floor(1 / (20 L gamma))`, clamped to `[1, T]`.
pub fn default_tau(l: f64, gamma: f64, iterations: usize) -> usize {
    let raw = (1.0 / (20.0 * l * gamma)).floor();
    let cap = iterations.max(1);
    if raw.is_finite() && raw >= 1.0 {
        (raw as usize).min(cap)
    } else if raw.is_finite() {
        1
    } else {
        cap
    }
}

fn snapshot(trace: &Trace, t: usize) -> Result<&ParamVector> {
    trace.snapshot(t).ok_or_else(|| {
        Error::Cadence(format!(
            "x_{t} not retained (snapshot_every = {}, {} snapshots)",
            trace.snapshot_every,
            trace.snapshots.len()
        ))
    })
}

/// Worker indices contributing at position `t` of the chosen sequence.
fn indices(trace: &Trace, process: Process, t: usize) -> Vec<usize> {
    let r = &trace.records[t];
    match process {
        Process::Received => vec![r.worker],
        Process::Assigned => r.assigned.iter().map(|a| a.worker).collect(),
    }
}

/// Partial-sum squared norms of one run, chunk by chunk.
pub(crate) fn chunk_partials(
    trace: &Trace,
    tau: usize,
    process: Process,
    obj: &Objective<'_>,
) -> Result<Vec<Vec<f64>>> {
    if tau == 0 {
        return Err(Error::param("correlation period must be at least 1"));
    }
    let t_end = trace.len();
    let mut out = Vec::with_capacity(t_end.div_ceil(tau));
    for start in (0..t_end).step_by(tau) {
        let x = snapshot(trace, start)?;
        let locals = obj.local_grads(x)?;
        let global = obj.mean_of(&locals);
        let mut acc = vec![0.0; obj.dim()];
        let mut partial = Vec::with_capacity(tau);
        for t in start..(start + tau).min(t_end) {
            for i in indices(trace, process, t) {
                let gi = locals.get(i).ok_or(Error::Index {
                    what: "worker",
                    index: i,
                    len: locals.len(),
                })?;
                for ((a, l), g) in acc.iter_mut().zip(gi.iter()).zip(global.iter()) {
                    *a += l - g;
                }
            }
            partial.push(norm_sq(&acc));
        }
        out.push(partial);
    }
    Ok(out)
}

struct GlobalCache<'o, 'a> {
    obj: &'o Objective<'a>,
    grads: HashMap<usize, ParamVector>,
}

impl<'o, 'a> GlobalCache<'o, 'a> {
    fn new(obj: &'o Objective<'a>) -> Self {
        Self {
            obj,
            grads: HashMap::new(),
        }
    }

    /// `grad f_i(x_j) - grad f(x_j)`.
    fn deviation(&mut self, trace: &Trace, worker: usize, j: usize) -> Result<ParamVector> {
        let x = snapshot(trace, j)?;
        if !self.grads.contains_key(&j) {
            let g = self.obj.global_grad(x)?;
            self.grads.insert(j, g);
        }
        let mut local = self.obj.local_grad(x, worker)?;
        for (l, g) in local.iter_mut().zip(self.grads[&j].iter()) {
            *l -= g;
        }
        Ok(local)
    }
}

/// Plug-in delay variance of one run:
/// `sum_t || sum_{j = pi_t}^{t-1} (grad f_{i_j}(x_{pi_j}) - grad f(x_{pi_j})) ||^2`,
/// or the same over the assignment sequence `(k_t, alpha_t)`.
pub fn delay_variance(trace: &Trace, process: Process, obj: &Objective<'_>) -> Result<f64> {
    let d = obj.dim();
    let mut cache = GlobalCache::new(obj);
    match process {
        Process::Received => {
            let dev: Vec<ParamVector> = trace
                .records
                .iter()
                .map(|r| cache.deviation(trace, r.worker, r.model_index))
                .collect::<Result<_>>()?;
            let mut total = 0.0;
            for r in &trace.records {
                let mut acc = vec![0.0; d];
                for dj in &dev[r.model_index..r.t] {
                    for (a, v) in acc.iter_mut().zip(dj.iter()) {
                        *a += v;
                    }
                }
                total += norm_sq(&acc);
            }
            Ok(total)
        }
        Process::Assigned => {
            // Position u of the assignment sequence holds the jobs handed out
            // during step u - 1; position 0 is the initial set.
            let positions = trace.len() + 1;
            let mut at: Vec<Vec<usize>> = vec![Vec::new(); positions];
            for (id, j) in trace.jobs.iter().enumerate() {
                at[j.assigned_step.map_or(0, |s| s + 1)].push(id);
            }
            let mut dev: Vec<Vec<f64>> = Vec::with_capacity(positions);
            for ids in &at {
                let mut e = vec![0.0; d];
                for &id in ids {
                    let job = trace.jobs[id].job;
                    let v = cache.deviation(trace, job.worker, job.model_index)?;
                    for (a, x) in e.iter_mut().zip(v.iter()) {
                        *a += x;
                    }
                }
                dev.push(e);
            }
            let mut total = 0.0;
            for (u, ids) in at.iter().enumerate() {
                for &id in ids {
                    let alpha = trace.jobs[id].job.model_index;
                    let mut acc = vec![0.0; d];
                    for e in &dev[alpha.min(u)..u] {
                        for (a, v) in acc.iter_mut().zip(e.iter()) {
                            *a += v;
                        }
                    }
                    total += norm_sq(&acc);
                }
            }
            Ok(total)
        }
    }
}

/// Sequence correlation per chunk and delay variance, each averaged over
/// runs that differ only in their seed.
pub fn sequence_correlation(
    traces: &[Trace],
    tau: usize,
    process: Process,
    obj: &Objective<'_>,
) -> Result<CorrelationReport> {
    let first = traces.first().ok_or_else(|| Error::param("no traces supplied"))?;
    let t_end = first.len();
    if let Some(bad) = traces.iter().find(|t| t.len() != t_end) {
        return Err(Error::param(format!("traces disagree on T: {} vs {t_end}", bad.len())));
    }
    let mut partial_sq: Vec<Vec<f64>> = Vec::new();
    let mut nu_sq = 0.0;
    for trace in traces {
        let parts = chunk_partials(trace, tau, process, obj)?;
        if partial_sq.is_empty() {
            partial_sq = parts.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (acc, p) in partial_sq.iter_mut().zip(&parts) {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        nu_sq += delay_variance(trace, process, obj)?;
    }
    let runs = traces.len() as f64;
    for p in &mut partial_sq {
        p.iter_mut().for_each(|v| *v /= runs);
    }
    let sigma_sq_per_chunk = partial_sq
        .iter()
        .map(|p| p.iter().copied().fold(0.0, f64::max))
        .collect();
    Ok(CorrelationReport {
        tau,
        process,
        sigma_sq_per_chunk,
        partial_sq,
        nu_sq: nu_sq / runs,
        num_runs: traces.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tau_clamps() {
        assert_eq!(default_tau(1.0, 1e-3, 10_000), 50);
        assert_eq!(default_tau(1.0, 1e-3, 20), 20);
        assert_eq!(default_tau(100.0, 1.0, 20), 1);
        assert_eq!(default_tau(1.0, 1e-3, 0), 1);
    }
}
