use crate::engine::{JobRecord, Trace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStats {
    pub tau_avg: f64,
    pub tau_max: usize,
    pub tilde_tau_avg: f64,
    pub tilde_tau_max: usize,
    pub tau_c: usize,
    /// `|A_{T+1}|`.
    pub assigned: usize,
}

/// `|A_{t+1} \ R_t|` for `t = 0..=iterations`.
pub fn in_flight_counts(jobs: &[JobRecord], iterations: usize) -> Vec<usize> {
    // Difference array over t: a job is in flight from t = ledger_index - 1
    // until t = received_step inclusive.
    let mut diff = vec![0i64; iterations + 2];
    for j in jobs {
        let from = j.ledger_index() - 1;
        if from > iterations {
            continue;
        }
        let to = j.received_step.unwrap_or(iterations).min(iterations);
        if to < from {
            continue;
        }
        diff[from] += 1;
        diff[to + 1] -= 1;
    }
    let mut acc = 0i64;
    diff[..=iterations]
        .iter()
        .map(|d| {
            acc += d;
            acc as usize
        })
        .collect()
}

fn check_complete(trace: &Trace) -> Result<()> {
    let t = trace.len();
    let received = trace.jobs.iter().filter(|j| j.received_step.is_some()).count();
    if received != t {
        return Err(Error::IncompleteTrace(format!(
            "{received} received jobs for {t} iterations"
        )));
    }
    let open = trace.jobs.len() - received;
    if trace.unfinished.len() != open {
        return Err(Error::IncompleteTrace(format!(
            "unfinished set has {} jobs, ledger has {open}",
            trace.unfinished.len()
        )));
    }
    Ok(())
}

/// Average and maximum delay of both processes plus the concurrency `tau_C`.
/// Jobs still in flight at `T` contribute `T - j` to the received process.
pub fn delay_stats(trace: &Trace) -> Result<DelayStats> {
    check_complete(trace)?;
    let t_end = trace.len();
    let assigned = trace.jobs.len();

    let mut sum = 0usize;
    let mut tau_max = 0usize;
    for r in &trace.records {
        sum += r.delay;
        tau_max = tau_max.max(r.delay);
    }
    for job in &trace.unfinished {
        let lag = t_end.checked_sub(job.model_index).ok_or_else(|| {
            Error::Invariant(format!(
                "unfinished job {} at model {} > T",
                job.job_id, job.model_index
            ))
        })?;
        sum += lag;
        tau_max = tau_max.max(lag);
    }

    let mut tilde_sum = 0usize;
    let mut tilde_max = 0usize;
    for j in &trace.jobs {
        let issued = j.assigned_step.map_or(0, |s| s + 1);
        let lag = issued
            .checked_sub(j.job.model_index)
            .ok_or_else(|| Error::Invariant(format!("job {} assigned at a future model", j.job.job_id)))?;
        tilde_sum += lag;
        tilde_max = tilde_max.max(lag);
    }

    let avg = |s: usize| if assigned == 0 { 0.0 } else { s as f64 / assigned as f64 };
    let tau_c = in_flight_counts(&trace.jobs, t_end).into_iter().max().unwrap_or(0);
    Ok(DelayStats {
        tau_avg: avg(sum),
        tau_max,
        tilde_tau_avg: avg(tilde_sum),
        tilde_tau_max: tilde_max,
        tau_c,
        assigned,
    })
}
