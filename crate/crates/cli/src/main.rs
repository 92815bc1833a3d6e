use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asgrad::data::{generate_synthetic, load_libsvm_with_dim, Dataset, SynConfig};
use asgrad::diagnostics::{diagnose, DiagnoseOptions};
use asgrad::engine::{run, BatchSize, RunConfig, RunStatus, TimingKind, TimingModel, Trace};
use asgrad::experiment::{run_sweep, SweepConfig, DEFAULT_GRID};
use asgrad::{Error, Objective, StrategySpec};
use clap::{Args, Parser, Subcommand};

mod settings;

use settings::Settings;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_TRACE: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "asgrad",
    version,
    about = "Simulate asynchronous SGD job-assignment strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic heterogeneous logistic-regression dataset.
    GenData(GenDataArgs),
    /// Run one (strategy, stepsize, seed) configuration.
    Run(RunArgs),
    /// Grid-search the stepsize over several seeds.
    Sweep(SweepArgs),
    /// Compute delay, correlation and bound diagnostics for saved runs.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 300)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
    /// Fail if any worker's shard holds a single label class.
    #[arg(long)]
    require_balanced: bool,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Key = value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Binary dataset written by gen-data.
    #[arg(long)]
    data: Option<String>,
    /// LibSVM text file, split into `--workers` shards.
    #[arg(long)]
    libsvm: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    libsvm_dim: Option<String>,
    /// Synthetic dataset parameters, used when no file is given.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
}

impl DataArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("data", self.data.clone()),
            ("libsvm", self.libsvm.clone()),
            ("workers", self.workers.clone()),
            ("libsvm-dim", self.libsvm_dim.clone()),
            ("alpha", self.alpha.clone()),
            ("beta", self.beta.clone()),
            ("n", self.n.clone()),
            ("m", self.m.clone()),
            ("d", self.d.clone()),
            ("data-seed", self.data_seed.clone()),
            ("lambda", self.lambda.clone()),
        ]
    }
}

#[derive(Args, Debug, Default)]
struct SimArgs {
    /// pure | pure-wait:b=B | random | random-wait:b=B | shuffled[:mode=cycle|once]
    /// | minibatch:b=B | rr[:mode=epoch|once]
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, short = 'T')]
    iterations: Option<String>,
    /// `full` or a per-gradient sample count.
    #[arg(long)]
    batch: Option<String>,
    /// fixed | poisson | normal | uniform
    #[arg(long)]
    timing: Option<String>,
    /// Comma-separated seconds per gradient; defaults to 1, 2, ..., n.
    #[arg(long)]
    speeds: Option<String>,
    #[arg(long)]
    snapshot_every: Option<String>,
    #[arg(long)]
    metric_every: Option<String>,
    /// Do not store per-job gradients.
    #[arg(long)]
    no_job_gradients: bool,
}

impl SimArgs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("strategy", self.strategy.clone()),
            ("iterations", self.iterations.clone()),
            ("batch", self.batch.clone()),
            ("timing", self.timing.clone()),
            ("speeds", self.speeds.clone()),
            ("snapshot-every", self.snapshot_every.clone()),
            ("metric-every", self.metric_every.clone()),
            ("no-job-gradients", self.no_job_gradients.then(|| "true".to_string())),
        ]
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory for the run bundle.
    #[arg(short, long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Comma-separated stepsizes; defaults to the standard seven-point grid.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated run seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(short, long)]
    out: Option<String>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Run bundle directory; repeat for several seeds of one configuration.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    /// Correlation period; defaults to floor(1 / (20 L gamma)).
    #[arg(long)]
    tau: Option<String>,
    /// Batch size the runs used (`full` or a count).
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    probes: Option<String>,
    #[arg(short, long)]
    out: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::Parameter(_)
            | Error::Parse { .. }
            | Error::Index { .. }
            | Error::Dimension { .. } => EXIT_CONFIG,
            Error::IncompleteTrace(_) | Error::Cadence(_) => EXIT_TRACE,
            Error::Contract(_) | Error::Invariant(_) | Error::Io { .. } => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn settings(data: &DataArgs, extra: Vec<(&'static str, Option<String>)>) -> Result<Settings, Error> {
    let mut s = match &data.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    s.overlay(data.pairs());
    s.overlay(extra);
    Ok(s)
}

fn load_dataset(s: &Settings) -> Result<Dataset, Error> {
    if let Some(path) = s.raw("data") {
        return Dataset::read_binary(path);
    }
    if let Some(path) = s.raw("libsvm") {
        let workers = s.get("workers")?.or(s.get("n")?).unwrap_or(10);
        return load_libsvm_with_dim(path, workers, s.get("libsvm-dim")?);
    }
    generate_synthetic(&SynConfig {
        alpha: s.get_or("alpha", 1.0)?,
        beta: s.get_or("beta", 1.0)?,
        n: s.get_or("n", 10)?,
        m: s.get_or("m", 200)?,
        d: s.get_or("d", 300)?,
        seed: s.get_or("data-seed", 0)?,
    })
}

/// Mini-batch and reshuffling treat every data point as its own client.
fn workers_for(spec: &StrategySpec, ds: Dataset) -> Result<Dataset, Error> {
    if spec.is_sequential() {
        ds.points_as_workers(ds.n() * ds.m())
    } else {
        Ok(ds)
    }
}

fn parse_batch(v: Option<&str>) -> Result<BatchSize, Error> {
    match v {
        None | Some("full") => Ok(BatchSize::Full),
        Some(v) => v
            .parse()
            .map(BatchSize::Samples)
            .map_err(|_| Error::Config(format!("batch must be `full` or a count, got {v:?}"))),
    }
}

fn run_config(s: &Settings, spec: StrategySpec, n: usize, gamma: f64, seed: u64) -> Result<RunConfig, Error> {
    let kind: TimingKind = s.get_or("timing", TimingKind::Fixed)?;
    let timing = match s.list::<f64>("speeds")? {
        Some(speeds) => TimingModel::new(kind, speeds)?,
        None => TimingModel::linear(kind, n),
    };
    let mut cfg = RunConfig::new(spec, gamma, s.require("iterations")?, timing, seed);
    cfg.batch = parse_batch(s.raw("batch"))?;
    cfg.snapshot_every = s.get_or("snapshot-every", 1)?;
    cfg.metric_every = s.get_or("metric-every", 1)?;
    cfg.keep_job_gradients = !s.flag("no-job-gradients")?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_gen_data(a: GenDataArgs) -> CmdResult {
    let cfg = SynConfig {
        alpha: a.alpha,
        beta: a.beta,
        n: a.n,
        m: a.m,
        d: a.d,
        seed: a.seed,
    };
    let ds = generate_synthetic(&cfg)?;
    if let Err(e) = ds.check_label_balance() {
        if a.require_balanced {
            return Err(e.into());
        }
        eprintln!("warning: {e}");
    }
    ds.write_binary(&a.out)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "alpha={}", cfg.alpha);
    let _ = writeln!(manifest, "beta={}", cfg.beta);
    let _ = writeln!(manifest, "n={}", cfg.n);
    let _ = writeln!(manifest, "m={}", cfg.m);
    let _ = writeln!(manifest, "d={}", cfg.d);
    let _ = writeln!(manifest, "seed={}", cfg.seed);
    let mut side = a.out.clone().into_os_string();
    side.push(".manifest");
    write_file(Path::new(&side), &manifest)?;
    Ok(())
}

fn summary_line(trace: &Trace, obj: &Objective<'_>) -> Result<String, Error> {
    let (_, final_g) = obj.loss_and_grad_norm_sq(&trace.final_x)?;
    let min_g = trace
        .grad_norm_curve()
        .into_iter()
        .map(|(_, g)| g)
        .fold(final_g, f64::min);
    Ok(format!("{final_g:.16e},{min_g:.16e},{}", trace.len()))
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let mut extra = a.sim.pairs();
    extra.extend([("gamma", a.gamma), ("seed", a.seed), ("out", a.out)]);
    let s = settings(&a.data, extra)?;
    let spec: StrategySpec = s.get_or("strategy", StrategySpec::Pure)?;
    let ds = workers_for(&spec, load_dataset(&s)?)?;
    let obj = Objective::new(&ds, s.get_or("lambda", 0.1)?)?;
    let cfg = run_config(&s, spec, ds.n(), s.require("gamma")?, s.get_or("seed", 0)?)?;
    let out: PathBuf = s.require::<String>("out")?.into();

    let trace = run(obj, &cfg)?;
    trace.write_bundle(&out)?;
    let summary = summary_line(&trace, &obj)?;
    write_file(
        &out.join("summary.csv"),
        &format!("final_grad_norm_sq,min_grad_norm_sq,wall_iters\n{summary}\n"),
    )?;
    println!("{summary}");
    if let RunStatus::Diverged { iteration } = trace.status {
        return Err(Failure {
            code: EXIT_DIVERGED,
            message: format!(
                "diverged at iteration {iteration}; partial trace written to {}",
                out.display()
            ),
        });
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let mut extra = a.sim.pairs();
    extra.extend([("grid", a.grid), ("seeds", a.seeds), ("out", a.out)]);
    let s = settings(&a.data, extra)?;
    let spec: StrategySpec = s.get_or("strategy", StrategySpec::Pure)?;
    let ds = workers_for(&spec, load_dataset(&s)?)?;
    let obj = Objective::new(&ds, s.get_or("lambda", 0.1)?)?;
    let grid = s.list::<f64>("grid")?.unwrap_or_else(|| DEFAULT_GRID.to_vec());
    let seeds = s.list::<u64>("seeds")?.unwrap_or_else(|| vec![0]);
    let mut base = run_config(&s, spec, ds.n(), grid.first().copied().unwrap_or(1.0), 0)?;
    base.snapshot_every = s.get_or("snapshot-every", 0)?;
    base.keep_job_gradients = false;
    let threads = match std::env::var("ASGRAD_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("ASGRAD_THREADS must be a count, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let out: PathBuf = s.require::<String>("out")?.into();
    let result = run_sweep(
        obj,
        &SweepConfig {
            base,
            grid,
            seeds,
            threads,
        },
    )?;
    result.write(&out)?;
    println!("best_gamma={:e}", result.best_gamma);
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> CmdResult {
    let s = settings(
        &a.data,
        vec![("tau", a.tau), ("batch", a.batch), ("probes", a.probes), ("out", a.out)],
    )?;
    let traces: Vec<Trace> = a.traces.iter().map(Trace::read_bundle).collect::<Result<_, _>>()?;
    let spec: StrategySpec = traces[0].strategy.parse()?;
    let ds = workers_for(&spec, load_dataset(&s)?)?;
    if let Some(t) = traces.iter().find(|t| t.n != ds.n() || t.d != ds.d()) {
        return Err(Error::Config(format!(
            "trace has n = {}, d = {} but the dataset has n = {}, d = {}",
            t.n,
            t.d,
            ds.n(),
            ds.d()
        ))
        .into());
    }
    let obj = Objective::new(&ds, s.get_or("lambda", 0.1)?)?;
    let opts = DiagnoseOptions {
        tau: s.get("tau")?,
        batch: parse_batch(s.raw("batch"))?,
        probes: s.get_or("probes", 16)?,
        ..DiagnoseOptions::default()
    };
    let report = diagnose(&traces, &obj, &opts)?;
    let out: PathBuf = s.require::<String>("out")?.into();
    report.write(&out)?;
    print!("{}", report.quantity_csv());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("asgrad: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
