//! Stepsize grid search over several seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::engine::{run, RunConfig, RunStatus};
use crate::error::{Error, Result};
use crate::objective::Objective;

pub const DEFAULT_GRID: [f64; 7] = [0.005, 0.004, 0.003, 0.002, 0.001, 0.0005, 0.0001];

/// Fraction of the final iterations averaged by [`tail_score`].
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Template run; its `gamma` and `seed` are overridden per grid point.
    pub base: RunConfig,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Worker threads; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: Vec<(usize, f64)>,
    pub iterations: usize,
    pub diverged: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaResult {
    pub gamma: f64,
    pub runs: Vec<SeedRun>,
    /// Median of the per-seed scores.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub results: Vec<GammaResult>,
    pub best_gamma: f64,
}

/// Mean of `||grad f||^2` over the recorded points in the last
/// [`TAIL_FRACTION`] of `iterations`. Empty windows score `+inf`.
pub fn tail_score(curve: &[(usize, f64)], iterations: usize) -> f64 {
    let window = ((iterations as f64 * TAIL_FRACTION).ceil() as usize).max(1);
    let start = iterations.saturating_sub(window);
    let tail: Vec<f64> = curve.iter().filter(|(t, _)| *t >= start).map(|(_, g)| *g).collect();
    if tail.is_empty() {
        return f64::INFINITY;
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else if v[k - 1].is_infinite() || v[k].is_infinite() {
        v[k - 1].max(v[k])
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Lowest score wins; ties go to the smaller stepsize.
pub fn select_best(scored: &[(f64, f64)]) -> Option<f64> {
    scored
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(g, _)| *g)
}

fn one_run(obj: Objective<'_>, base: &RunConfig, gamma: f64, seed: u64) -> Result<SeedRun> {
    let mut cfg = base.clone();
    cfg.gamma = gamma;
    cfg.seed = seed;
    let trace = run(obj, &cfg)?;
    let diverged = matches!(trace.status, RunStatus::Diverged { .. });
    let curve = trace.grad_norm_curve();
    let score = if diverged {
        f64::INFINITY
    } else {
        tail_score(&curve, cfg.iterations)
    };
    Ok(SeedRun {
        seed,
        curve,
        iterations: trace.len(),
        diverged,
        score,
    })
}

pub fn run_sweep(obj: Objective<'_>, cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.grid.is_empty() {
        return Err(Error::Config("stepsize grid is empty".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    let mut probe = cfg.base.clone();
    for &g in &cfg.grid {
        probe.gamma = g;
        probe.validate(&obj)?;
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.grid.len())
        .flat_map(|g| cfg.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<SeedRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(g, seed)| one_run(obj, &cfg.base, cfg.grid[g], seed))
            .collect::<Result<_>>()
    })?;

    let mut runs = runs.into_iter();
    let results: Vec<GammaResult> = cfg
        .grid
        .iter()
        .map(|&gamma| {
            let runs: Vec<SeedRun> = runs.by_ref().take(cfg.seeds.len()).collect();
            let scores: Vec<f64> = runs.iter().map(|r| r.score).collect();
            GammaResult {
                gamma,
                score: median(&scores),
                runs,
            }
        })
        .collect();
    let scored: Vec<(f64, f64)> = results.iter().map(|r| (r.gamma, r.score)).collect();
    let best_gamma = select_best(&scored).expect("grid is nonempty");
    Ok(SweepResult { results, best_gamma })
}

/// File stem used for a stepsize's curve file.
pub fn curve_file_name(gamma: f64) -> String {
    format!("curve_gamma_{gamma:e}.csv")
}

impl GammaResult {
    /// Long-format curve table `seed,t,grad_norm_sq`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("seed,t,grad_norm_sq\n");
        for r in &self.runs {
            for (t, g) in &r.curve {
                let _ = writeln!(out, "{},{t},{g:.16e}", r.seed);
            }
        }
        out
    }
}

impl SweepResult {
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("gamma,seed,iterations,diverged,score\n");
        for g in &self.results {
            for r in &g.runs {
                let _ = writeln!(
                    out,
                    "{:e},{},{},{},{:.16e}",
                    g.gamma, r.seed, r.iterations, r.diverged, r.score
                );
            }
        }
        out
    }

    /// Write one curve file per stepsize, `scores.csv` and `best_gamma.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            ("scores.csv".to_string(), self.scores_csv()),
            ("best_gamma.txt".to_string(), format!("{:e}\n", self.best_gamma)),
        ];
        for g in &self.results {
            files.push((curve_file_name(g.gamma), g.curve_csv()));
        }
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Parse a curve file back into `(seed, t, grad_norm_sq)` rows.
pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<(u64, usize, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("seed,t,grad_norm_sq") {
        return Err(bad(1, "missing header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut it = l.split(',');
            let mut next = || it.next().ok_or_else(|| bad(i + 2, "expected three columns"));
            let seed = next()?.parse().map_err(|_| bad(i + 2, "bad seed"))?;
            let t = next()?.parse().map_err(|_| bad(i + 2, "bad t"))?;
            let g = next()?.parse().map_err(|_| bad(i + 2, "bad grad_norm_sq"))?;
            Ok((seed, t, g))
        })
        .collect()
}
