use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use asgrad::diagnostics::read_quantity_csv;
use asgrad::experiment::{curve_file_name, median, read_curve_csv, select_best, tail_score};
use asgrad::{Dataset, Trace};

fn asgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asgrad")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = asgrad(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    asgrad(args).status.code().unwrap()
}

const SMALL: [&str; 6] = ["--n", "4", "--m", "20", "--d", "6"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_header_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("syn11.bin");
    let b = dir.path().join("again.bin");
    let flags = [
        "--alpha", "1", "--beta", "1", "--n", "10", "--m", "200", "--d", "300", "--seed", "0",
    ];
    for out in [&a, &b] {
        let mut args = vec!["gen-data"];
        args.extend(flags);
        args.extend(["-o", path(out)]);
        ok(&args);
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(&bytes[..4], b"ASGD");
    let header: Vec<u32> = bytes[4..16]
        .chunks(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(header, [10, 200, 300]);
    assert_eq!(bytes, fs::read(&b).unwrap());
    let ds = Dataset::read_binary(&a).unwrap();
    assert_eq!((ds.n(), ds.m(), ds.d()), (10, 200, 300));

    let z = dir.path().join("zero.bin");
    ok(&[
        "gen-data",
        "--alpha",
        "0",
        "--beta",
        "0",
        "--n",
        "2",
        "--m",
        "5",
        "--d",
        "3",
        "-o",
        path(&z),
    ]);
    let manifest = fs::read_to_string(dir.path().join("zero.bin.manifest")).unwrap();
    assert!(manifest.lines().any(|l| l == "alpha=0"));
    assert!(manifest.lines().any(|l| l == "beta=0"));
    assert!(manifest.lines().any(|l| l == "seed=0"));
}

#[test]
fn gen_data_can_require_both_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.bin");
    // A one-sample shard can only hold one label.
    let args = [
        "gen-data",
        "--alpha",
        "1",
        "--beta",
        "1",
        "--n",
        "2",
        "--m",
        "1",
        "--d",
        "3",
        "-o",
        path(&out),
    ];
    let plain = asgrad(&args);
    assert!(plain.status.success());
    assert!(String::from_utf8_lossy(&plain.stderr).contains("single label"));
    let mut strict = args.to_vec();
    strict.push("--require-balanced");
    assert_eq!(code(&strict), 2);
}

#[test]
fn run_is_reproducible_and_reparseable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = with_small(&[
            "run",
            "--strategy",
            "random",
            "--gamma",
            "0.01",
            "-T",
            "60",
            "--timing",
            "poisson",
            "--batch",
            "5",
            "--seed",
            "3",
            "-o",
            path(out),
        ]);
        let line = ok(&args);
        assert_eq!(line.trim().split(',').count(), 3);
    }
    for f in [
        "trace.csv",
        "jobs.csv",
        "run.manifest",
        "summary.csv",
        "models.bin",
        "snapshots.bin",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("final_grad_norm_sq,min_grad_norm_sq,wall_iters\n"));
    assert!(summary.trim_end().ends_with(",60"));
    let trace = Trace::read_bundle(&a).unwrap();
    assert_eq!(trace.len(), 60);
    assert_eq!(trace.to_csv(), fs::read_to_string(a.join("trace.csv")).unwrap());
}

#[test]
fn zero_iterations_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    ok(&with_small(&["run", "--gamma", "0.01", "-T", "0", "-o", path(&out)]));
    let trace = Trace::read_bundle(&out).unwrap();
    assert!(trace.is_empty());
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = path(&out);
    assert_eq!(
        code(&with_small(&[
            "run",
            "--gamma",
            "0.01",
            "-T",
            "5",
            "--strategy",
            "pure-wait:b=9",
            "-o",
            o
        ])),
        2
    );
    assert_eq!(code(&with_small(&["run", "--gamma", "-1", "-T", "5", "-o", o])), 2);
    assert_eq!(
        code(&with_small(&[
            "run",
            "--gamma",
            "0.01",
            "-T",
            "5",
            "--timing",
            "sometimes",
            "-o",
            o
        ])),
        2
    );
    assert_eq!(code(&with_small(&["run", "-T", "5", "-o", o])), 2);

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "gamma = 0.01\nthis line is broken\n").unwrap();
    assert_eq!(
        code(&with_small(&["run", "--config", path(&cfg), "-T", "5", "-o", o])),
        2
    );

    let blown = dir.path().join("blown");
    let out = asgrad(&with_small(&[
        "run",
        "--gamma",
        "1e14",
        "-T",
        "50",
        "--lambda",
        "0",
        "-o",
        path(&blown),
    ]));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let partial = Trace::read_bundle(&blown).unwrap();
    assert!(partial.len() < 50);

    let sparse = dir.path().join("sparse");
    ok(&with_small(&[
        "run",
        "--gamma",
        "0.01",
        "-T",
        "30",
        "--snapshot-every",
        "7",
        "-o",
        path(&sparse),
    ]));
    let diag = dir.path().join("diag");
    assert_eq!(
        code(&with_small(&[
            "diagnose",
            "--trace",
            path(&sparse),
            "--tau",
            "3",
            "-o",
            path(&diag)
        ])),
        4
    );

    fs::remove_file(sparse.join("jobs.csv")).unwrap();
    assert_eq!(
        code(&with_small(&["diagnose", "--trace", path(&sparse), "-o", path(&diag)])),
        4
    );
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "# toy\nstrategy = shuffled\ngamma = 0.5\niterations = 25\nn = 3\nm = 10\nd = 4\n",
    )
    .unwrap();
    let out = dir.path().join("r");
    ok(&["run", "--config", path(&cfg), "--gamma", "0.02", "-o", path(&out)]);
    let trace = Trace::read_bundle(&out).unwrap();
    assert_eq!((trace.len(), trace.n, trace.gamma), (25, 3, 0.02));
    assert!(trace.strategy.starts_with("shuffled"));
}

#[test]
fn single_gamma_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let stdout = ok(&with_small(&[
        "sweep",
        "--grid",
        "0.003",
        "--seeds",
        "0,1",
        "-T",
        "40",
        "-o",
        path(&out),
    ]));
    assert_eq!(stdout.trim(), "best_gamma=3e-3");
    assert_eq!(fs::read_to_string(out.join("best_gamma.txt")).unwrap().trim(), "3e-3");
}

#[test]
fn sweep_selection_matches_curve_files() {
    let dir = tempfile::tempdir().unwrap();
    let grid = [0.5, 0.05, 0.005];
    let t = 80;
    let run_sweep = |name: &str| {
        let out = dir.path().join(name);
        ok(&with_small(&[
            "sweep",
            "--strategy",
            "random",
            "--grid",
            "0.5,0.05,0.005",
            "--seeds",
            "1,2,3",
            "-T",
            "80",
            "--timing",
            "poisson",
            "--metric-every",
            "2",
            "-o",
            path(&out),
        ]));
        out
    };
    let out = run_sweep("s1");
    let mut scored = Vec::new();
    for g in grid {
        let rows = read_curve_csv(out.join(curve_file_name(g))).unwrap();
        let scores: Vec<f64> = [1u64, 2, 3]
            .iter()
            .map(|&s| {
                let curve: Vec<(usize, f64)> = rows.iter().filter(|r| r.0 == s).map(|r| (r.1, r.2)).collect();
                tail_score(&curve, t)
            })
            .collect();
        scored.push((g, median(&scores)));
    }
    let best = select_best(&scored).unwrap();
    let written: f64 = fs::read_to_string(out.join("best_gamma.txt"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert_eq!(written, best);

    let again = run_sweep("s2");
    assert_eq!(
        fs::read(out.join("best_gamma.txt")).unwrap(),
        fs::read(again.join("best_gamma.txt")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("scores.csv")).unwrap(),
        fs::read(again.join("scores.csv")).unwrap()
    );
}

fn quantities(dir: &Path) -> Vec<(String, f64)> {
    read_quantity_csv(dir.join("diagnostics.csv")).unwrap()
}

fn get(q: &[(String, f64)], k: &str) -> f64 {
    q.iter().find(|(n, _)| n == k).unwrap().1
}

#[test]
fn diagnose_reshuffling_and_pure() {
    let dir = tempfile::tempdir().unwrap();
    let rr = dir.path().join("rr");
    let data = ["--n", "2", "--m", "6", "--d", "4"];
    let mut args = vec![
        "run",
        "--strategy",
        "rr",
        "--gamma",
        "0.01",
        "-T",
        "36",
        "-o",
        path(&rr),
    ];
    args.extend(data);
    ok(&args);
    let diag = dir.path().join("rr_diag");
    let mut args = vec!["diagnose", "--trace", path(&rr), "--tau", "4", "-o", path(&diag)];
    args.extend(data);
    let printed = ok(&args);
    assert_eq!(printed, fs::read_to_string(diag.join("diagnostics.csv")).unwrap());
    let q = quantities(&diag);
    assert_eq!(get(&q, "tau_max"), 0.0);
    assert_eq!(get(&q, "nu_sq"), 0.0);
    assert_eq!(get(&q, "tau_c"), 1.0);

    let pure = dir.path().join("pure");
    let p_diag = dir.path().join("pure_diag");
    let data = ["--n", "10", "--m", "10", "--d", "5"];
    let mut args = vec!["run", "--gamma", "0.01", "-T", "50", "-o", path(&pure)];
    args.extend(data);
    ok(&args);
    let mut args = vec!["diagnose", "--trace", path(&pure), "-o", path(&p_diag)];
    args.extend(data);
    ok(&args);
    let q = quantities(&p_diag);
    assert_eq!(get(&q, "tau_c"), 10.0);
    assert!(get(&q, "lemma_max_residual") <= 1e-9 * (1.0 + get(&q, "max_x_norm")));
}
