use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::objective::{Objective, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualIterates {
    /// `x~_0 ..= x~_T`.
    pub iterates: Vec<ParamVector>,
    /// `||x_t - x~_t||` for `t = 0..=T`.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignedIterates {
    /// `y_0 ..= y_T`.
    pub iterates: Vec<ParamVector>,
    /// `||(x_t - y_t) - gamma * sum_{A_t \ R_t} g||` for `t = 0..=T`.
    pub residuals: Vec<f64>,
    pub lemma_max_residual: f64,
    /// `max_t ||x_t||`.
    pub max_x_norm: f64,
}

fn job_gradient(trace: &Trace, id: usize) -> Result<&ParamVector> {
    trace
        .job_gradients
        .get(id)
        .ok_or_else(|| Error::IncompleteTrace(format!("no stored gradient for job {id}")))
}

/// Job received at each step.
fn receipts(trace: &Trace) -> Result<Vec<usize>> {
    let mut out = vec![usize::MAX; trace.len()];
    for (id, j) in trace.jobs.iter().enumerate() {
        if let Some(s) = j.received_step {
            let slot = out
                .get_mut(s)
                .ok_or_else(|| Error::IncompleteTrace(format!("job {id} received at step {s} beyond T")))?;
            *slot = id;
        }
    }
    if let Some(t) = out.iter().position(|&id| id == usize::MAX) {
        return Err(Error::IncompleteTrace(format!(
            "no job recorded as received at step {t}"
        )));
    }
    Ok(out)
}

/// `x_0 ..= x_T` rebuilt from `x_0` and the stored job gradients, using the
/// same arithmetic as the server.
pub fn replay_iterates(trace: &Trace) -> Result<Vec<ParamVector>> {
    let mut x = trace.x0.clone();
    let mut out = Vec::with_capacity(trace.len() + 1);
    out.push(x.clone());
    for id in receipts(trace)? {
        let g = job_gradient(trace, id)?;
        for (xi, gi) in x.iter_mut().zip(g.iter()) {
            *xi -= trace.step_size * gi;
        }
        out.push(x.clone());
    }
    Ok(out)
}

fn dense_snapshots(trace: &Trace) -> Result<&[ParamVector]> {
    if trace.snapshot_every != 1 || trace.snapshots.len() != trace.len() + 1 {
        return Err(Error::Cadence(format!(
            "need every x_t, have {} snapshots at cadence {}",
            trace.snapshots.len(),
            trace.snapshot_every
        )));
    }
    Ok(&trace.snapshots)
}

/// Full-gradient shadow of the run, restarted at the real model whenever
/// `(t + 1) mod tau == 0`.
pub fn virtual_iterates(trace: &Trace, tau: usize, obj: &Objective<'_>) -> Result<VirtualIterates> {
    if tau == 0 {
        return Err(Error::param("restart period must be at least 1"));
    }
    let xs = dense_snapshots(trace)?;
    let gamma = trace.step_size;
    let mut cur = xs[0].clone();
    let mut iterates = Vec::with_capacity(xs.len());
    let mut gaps = Vec::with_capacity(xs.len());
    iterates.push(cur.clone());
    gaps.push(0.0);
    for t in 0..trace.len() {
        if (t + 1) % tau == 0 {
            cur = xs[t + 1].clone();
        } else {
            let g = obj.global_grad(&xs[t])?;
            for (c, gi) in cur.iter_mut().zip(g.iter()) {
                *c -= gamma * gi;
            }
        }
        gaps.push(dist(&xs[t + 1], &cur));
        iterates.push(cur.clone());
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    Ok(VirtualIterates {
        iterates,
        gaps,
        max_gap,
    })
}

/// Shadow sequence that applies every gradient the moment its job is
/// assigned, and the largest deviation from the identity
/// `x_t - y_t = gamma * sum of in-flight gradients`.
pub fn assigned_virtual_iterates(trace: &Trace) -> Result<AssignedIterates> {
    let t_end = trace.len();
    let xs = match dense_snapshots(trace) {
        Ok(s) => s.to_vec(),
        Err(_) => replay_iterates(trace)?,
    };
    if trace.job_gradients.len() != trace.jobs.len() {
        return Err(Error::IncompleteTrace(format!(
            "{} stored gradients for {} jobs",
            trace.job_gradients.len(),
            trace.jobs.len()
        )));
    }
    let gamma = trace.step_size;
    let d = trace.d;

    // Jobs entering the ledger at each index A_s, s = 1..=T+1.
    let mut entering: Vec<Vec<usize>> = vec![Vec::new(); t_end + 2];
    for (id, j) in trace.jobs.iter().enumerate() {
        let s = j.ledger_index();
        if s <= t_end + 1 {
            entering[s].push(id);
        }
    }

    let mut y = xs[0].clone();
    let mut iterates = Vec::with_capacity(t_end + 1);
    let mut residuals = Vec::with_capacity(t_end + 1);
    let mut open: Vec<usize> = Vec::new();
    for t in 0..=t_end {
        if t > 0 {
            for &id in &entering[t] {
                let g = job_gradient(trace, id)?;
                for (yi, gi) in y.iter_mut().zip(g.iter()) {
                    *yi -= gamma * gi;
                }
            }
            // A_t \ R_t: add the jobs entering A_t, drop those received at t - 1.
            open.extend(&entering[t]);
            open.retain(|&id| trace.jobs[id].received_step != Some(t - 1));
        }
        let mut r: Vec<f64> = xs[t].iter().zip(y.iter()).map(|(x, y)| x - y).collect();
        for &id in &open {
            let g = job_gradient(trace, id)?;
            for (ri, gi) in r.iter_mut().zip(g.iter()) {
                *ri -= gamma * gi;
            }
        }
        debug_assert_eq!(r.len(), d);
        residuals.push(norm(&r));
        iterates.push(y.clone());
    }
    let lemma_max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let max_x_norm = xs.iter().map(|x| x.norm()).fold(0.0, f64::max);
    Ok(AssignedIterates {
        iterates,
        residuals,
        lemma_max_residual,
        max_x_norm,
    })
}
