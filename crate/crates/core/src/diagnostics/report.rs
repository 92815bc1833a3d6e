use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    assigned_virtual_iterates, default_tau, delay_stats, phi, recommended_stepsize, sequence_correlation,
    theorem3_bound, theorem4_bound, virtual_iterates, Process, StepsizeParams, StepsizeRule,
};
use crate::engine::{BatchSize, Trace};
use crate::error::{Error, Result};
use crate::objective::{Objective, ParamVector};
use crate::rng::RandomStream;
use crate::schedulers::StrategySpec;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    /// Correlation period; defaults to `floor(1 / (20 L gamma))`.
    pub tau: Option<usize>,
    /// Batch size the runs used, for the gradient-noise estimate.
    pub batch: BatchSize,
    /// Number of trajectory points used to estimate `L`, `zeta^2` and `G`.
    pub probes: usize,
    /// Monte-Carlo draws per probe for `sigma^2`.
    pub noise_draws: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            tau: None,
            batch: BatchSize::Full,
            probes: 16,
            noise_draws: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub quantities: Vec<(String, f64)>,
    pub sigma_sq_received: Vec<f64>,
    pub sigma_sq_assigned: Vec<f64>,
    pub virtual_gaps: Vec<f64>,
}

impl Report {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn quantity_csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        for (k, v) in &self.quantities {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn chunk_csv(chunks: &[f64]) -> String {
        let mut out = String::from("k,sigma_sq_k\n");
        for (k, v) in chunks.iter().enumerate() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    /// Write `diagnostics.csv`, `sigma_received.csv`, `sigma_assigned.csv`
    /// and `virtual_gaps.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut gaps = String::from("t,gap\n");
        for (t, g) in self.virtual_gaps.iter().enumerate() {
            let _ = writeln!(gaps, "{t},{g}");
        }
        for (name, text) in [
            ("diagnostics.csv", self.quantity_csv()),
            ("sigma_received.csv", Self::chunk_csv(&self.sigma_sq_received)),
            ("sigma_assigned.csv", Self::chunk_csv(&self.sigma_sq_assigned)),
            ("virtual_gaps.csv", gaps),
        ] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn read_pairs(path: &Path, header: &str) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    match lines.next() {
        Some(h) if h == header => {}
        other => return Err(bad(1, format!("expected header {header:?}, got {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| bad(i + 2, "expected two columns".into()))?;
            let v = v.parse().map_err(|_| bad(i + 2, format!("bad value {v:?}")))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

/// Parse a `quantity,value` file.
pub fn read_quantity_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    read_pairs(path.as_ref(), "quantity,value")
}

/// Parse a `k,sigma_sq_k` file.
pub fn read_chunk_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let pairs = read_pairs(path, "k,sigma_sq_k")?;
    for (i, (k, _)) in pairs.iter().enumerate() {
        if k.parse::<usize>().ok() != Some(i) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("chunk index {k} out of order"),
            });
        }
    }
    Ok(pairs.into_iter().map(|(_, v)| v).collect())
}

fn probe_points(trace: &Trace, count: usize) -> Vec<ParamVector> {
    let snaps = &trace.snapshots;
    let count = count.max(2);
    if snaps.len() <= count {
        let mut out = snaps.clone();
        if out.len() < 2 {
            out.push(trace.x0.clone());
            out.push(trace.final_x.clone());
        }
        return out;
    }
    (0..count)
        .map(|k| snaps[k * (snaps.len() - 1) / (count - 1)].clone())
        .collect()
}

/// Every diagnostic for a set of runs that share a configuration. Per-run
/// quantities (delays, gaps, residual) are taken from the first run, except
/// the residual which is the worst over all runs; correlations are averaged.
pub fn diagnose(traces: &[Trace], obj: &Objective<'_>, opts: &DiagnoseOptions) -> Result<Report> {
    let first = traces.first().ok_or_else(|| Error::param("no traces supplied"))?;
    let t_end = first.len();
    let stats = delay_stats(first)?;

    let probes = probe_points(first, opts.probes);
    let l_hat = obj.estimate_smoothness(&probes)?;
    let (zeta_sq, g_hat) = obj.estimate_constants(&probes)?;
    let sigma_sq = match opts.batch {
        BatchSize::Full => 0.0,
        BatchSize::Samples(b) => {
            let mut rng = RandomStream::new(opts.seed);
            obj.estimate_variance(&probes, b, opts.noise_draws, &mut rng)?
        }
    };

    let gamma = first.step_size;
    let tau = opts.tau.unwrap_or_else(|| default_tau(l_hat, gamma, t_end));
    let received = sequence_correlation(traces, tau, Process::Received, obj)?;
    let assigned = sequence_correlation(traces, tau, Process::Assigned, obj)?;
    let phi_r = phi(&received.sigma_sq_per_chunk, received.nu_sq, t_end);
    let phi_a = phi(&assigned.sigma_sq_per_chunk, assigned.nu_sq, t_end);

    let virt = virtual_iterates(first, tau, obj)?;
    let mut lemma = 0.0f64;
    let mut max_x = 0.0f64;
    let mut y1 = None;
    for trace in traces {
        let a = assigned_virtual_iterates(trace)?;
        lemma = lemma.max(a.lemma_max_residual);
        max_x = max_x.max(a.max_x_norm);
        if y1.is_none() {
            y1 = a.iterates.get(1).cloned();
        }
    }
    let f0 = obj.global_loss(&first.x0)?;
    let f1 = match &y1 {
        Some(y) => obj.global_loss(y)?,
        None => f0,
    };

    let (t3, t4) = if t_end > 0 {
        (
            theorem3_bound(f0, l_hat, gamma, t_end, sigma_sq, phi_r),
            theorem4_bound(f1, l_hat, gamma, t_end, sigma_sq, stats.tau_c, g_hat, phi_a),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let rule = first
        .strategy
        .parse::<StrategySpec>()
        .ok()
        .map(|s| (StepsizeRule::for_strategy(&s), s.step_divisor()));
    let recommended = match rule {
        Some((rule, b)) if l_hat > 0.0 => {
            let f = match rule {
                StepsizeRule::Pure
                | StepsizeRule::MiniBatch
                | StepsizeRule::PureWaiting
                | StepsizeRule::Reshuffling => f0,
                _ => f1,
            };
            recommended_stepsize(
                rule,
                &StepsizeParams {
                    l: l_hat,
                    f,
                    sigma_sq,
                    zeta_sq,
                    g: g_hat,
                    t: t_end,
                    tau_max: stats.tau_max,
                    tau_c: stats.tau_c,
                    n: first.n,
                    b,
                },
            )?
        }
        _ => f64::NAN,
    };

    let quantities: Vec<(String, f64)> = [
        ("T", t_end as f64),
        ("n", first.n as f64),
        ("runs", traces.len() as f64),
        ("gamma", first.gamma),
        ("step_size", gamma),
        ("tau", tau as f64),
        ("tau_avg", stats.tau_avg),
        ("tau_max", stats.tau_max as f64),
        ("tilde_tau_avg", stats.tilde_tau_avg),
        ("tilde_tau_max", stats.tilde_tau_max as f64),
        ("tau_c", stats.tau_c as f64),
        ("engine_max_in_flight", first.max_in_flight as f64),
        ("L_hat", l_hat),
        ("zeta_sq_hat", zeta_sq),
        ("G_hat", g_hat),
        ("sigma_sq_hat", sigma_sq),
        ("F0", f0),
        ("F1", f1),
        ("sigma_sq_mean", received.mean_sigma_sq()),
        ("nu_sq", received.nu_sq),
        ("Phi", phi_r),
        ("tilde_sigma_sq_mean", assigned.mean_sigma_sq()),
        ("tilde_nu_sq", assigned.nu_sq),
        ("Phi_tilde", phi_a),
        ("virtual_max_gap", virt.max_gap),
        ("lemma_max_residual", lemma),
        ("max_x_norm", max_x),
        ("theorem3_bound", t3),
        ("theorem4_bound", t4),
        ("recommended_gamma", recommended),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    Ok(Report {
        quantities,
        sigma_sq_received: received.sigma_sq_per_chunk,
        sigma_sq_assigned: assigned.sigma_sq_per_chunk,
        virtual_gaps: virt.gaps,
    })
}
