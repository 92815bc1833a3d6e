#![allow(clippy::needless_range_loop)]

use asgrad::data::{generate_synthetic, SynConfig};
use asgrad::diagnostics::{
    assigned_virtual_iterates, delay_stats, delay_variance, diagnose, read_chunk_csv, read_quantity_csv,
    sequence_correlation, virtual_iterates, DiagnoseOptions, Process,
};
use asgrad::engine::{run, RunConfig, TimingKind, TimingModel, Trace};
use asgrad::linalg::{dist, norm_sq};
use asgrad::{Dataset, Objective};

fn syn(n: usize, m: usize, d: usize, seed: u64) -> Dataset {
    generate_synthetic(&SynConfig {
        alpha: 1.0,
        beta: 1.0,
        n,
        m,
        d,
        seed,
    })
    .unwrap()
}

fn two_worker_run(obj: Objective<'_>, t: usize) -> Trace {
    let timing = TimingModel::new(TimingKind::Fixed, vec![1.0, 2.0]).unwrap();
    run(obj, &RunConfig::new("pure".parse().unwrap(), 0.05, t, timing, 1)).unwrap()
}

/// Index of the job received at each step.
fn receipts(trace: &Trace) -> Vec<usize> {
    let mut out = vec![0; trace.len()];
    for (id, j) in trace.jobs.iter().enumerate() {
        if let Some(s) = j.received_step {
            out[s] = id;
        }
    }
    out
}

#[test]
fn two_worker_sigma_by_hand() {
    // With n = 2, grad f_i - grad f = +-(grad f_0 - grad f_1) / 2: a chunk
    // of two equal workers sums to twice that, two distinct ones to zero.
    let ds = syn(2, 15, 4, 1);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let trace = two_worker_run(obj, 12);
    let rep = sequence_correlation(std::slice::from_ref(&trace), 2, Process::Received, &obj).unwrap();
    assert_eq!(rep.sigma_sq_per_chunk.len(), 6);
    for k in 0..6 {
        let x = trace.snapshot(2 * k).unwrap();
        let g0 = obj.local_grad(x, 0).unwrap();
        let g1 = obj.local_grad(x, 1).unwrap();
        let half: f64 = g0.iter().zip(g1.iter()).map(|(a, b)| ((a - b) / 2.0).powi(2)).sum();
        let (i, j) = (trace.records[2 * k].worker, trace.records[2 * k + 1].worker);
        let expected = if i == j { 4.0 * half } else { half };
        let got = rep.sigma_sq_per_chunk[k];
        assert!(
            (got - expected).abs() <= 1e-12 * (1.0 + expected),
            "chunk {k}: {got} vs {expected}"
        );
    }
}

#[test]
fn two_worker_nu_by_hand() {
    let ds = syn(2, 15, 4, 2);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let trace = two_worker_run(obj, 6);
    // Oracle schedule from the fixed event queue.
    let workers = [0usize, 0, 1, 0, 0, 1];
    let pi = [0usize, 1, 0, 2, 4, 3];
    let dev = |j: usize| -> Vec<f64> {
        let x = trace.snapshot(pi[j]).unwrap();
        let gi = obj.local_grad(x, workers[j]).unwrap();
        let g = obj.global_grad(x).unwrap();
        gi.iter().zip(g.iter()).map(|(a, b)| a - b).collect()
    };
    let mut expected = 0.0;
    for t in 0..6 {
        let mut acc = vec![0.0; 4];
        for j in pi[t]..t {
            for (a, v) in acc.iter_mut().zip(dev(j)) {
                *a += v;
            }
        }
        expected += norm_sq(&acc);
    }
    let got = delay_variance(&trace, Process::Received, &obj).unwrap();
    assert!(
        (got - expected).abs() <= 1e-12 * (1.0 + expected),
        "{got} vs {expected}"
    );
    assert!(expected > 0.0);
}

#[test]
fn no_delays_means_no_delay_variance() {
    let ds = syn(1, 20, 4, 3);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let trace = run(
        obj,
        &RunConfig::new(
            "pure".parse().unwrap(),
            0.05,
            30,
            TimingModel::linear(TimingKind::Poisson, 1),
            2,
        ),
    )
    .unwrap();
    assert_eq!(delay_variance(&trace, Process::Received, &obj).unwrap(), 0.0);
}

#[test]
fn virtual_gap_identity() {
    let ds = syn(4, 12, 5, 4);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let cfg = RunConfig::new(
        "random".parse().unwrap(),
        0.03,
        60,
        TimingModel::linear(TimingKind::Poisson, 4),
        5,
    );
    let trace = run(obj, &cfg).unwrap();
    let tau = 7;
    let virt = virtual_iterates(&trace, tau, &obj).unwrap();
    let got_ids = receipts(&trace);
    for t in 0..=trace.len() {
        let restart = t / tau * tau;
        let mut acc = vec![0.0; 5];
        for j in restart..t {
            let full = obj.global_grad(trace.snapshot(j).unwrap()).unwrap();
            let applied = &trace.job_gradients[got_ids[j]];
            for ((a, f), g) in acc.iter_mut().zip(full.iter()).zip(applied.iter()) {
                *a += f - g;
            }
        }
        let expected = trace.step_size * norm_sq(&acc).sqrt();
        assert!(
            (virt.gaps[t] - expected).abs() <= 1e-10,
            "t = {t}: {} vs {expected}",
            virt.gaps[t]
        );
    }
}

#[test]
fn restart_every_step_has_no_gap() {
    let ds = syn(2, 10, 4, 6);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let trace = two_worker_run(obj, 20);
    let virt = virtual_iterates(&trace, 1, &obj).unwrap();
    assert!(virt.gaps.iter().all(|&g| g == 0.0));
}

#[test]
fn assigned_iterate_by_hand() {
    let ds = syn(2, 15, 4, 7);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let trace = two_worker_run(obj, 6);
    let a = assigned_virtual_iterates(&trace).unwrap();
    // y_3 applies the two initial jobs and the jobs handed out at steps 0 and 1.
    let g = &trace.job_gradients;
    let gamma = trace.step_size;
    let y3: Vec<f64> = (0..4)
        .map(|k| trace.x0[k] - gamma * (g[0][k] + g[1][k]) - gamma * g[2][k] - gamma * g[3][k])
        .collect();
    assert_eq!(trace.jobs[2].assigned_step, Some(0));
    assert_eq!(trace.jobs[3].assigned_step, Some(1));
    assert!(dist(&a.iterates[3], &y3) <= 1e-14);
    assert!(a.lemma_max_residual <= 1e-9 * (1.0 + a.max_x_norm));
}

#[test]
fn sequential_gap_is_one_gradient() {
    let ds = syn(2, 10, 4, 8).points_as_workers(16).unwrap();
    let obj = Objective::new(&ds, 0.1).unwrap();
    let trace = run(
        obj,
        &RunConfig::new(
            "rr".parse().unwrap(),
            0.05,
            40,
            TimingModel::linear(TimingKind::Fixed, 16),
            3,
        ),
    )
    .unwrap();
    assert_eq!(delay_stats(&trace).unwrap().tau_c, 1);
    let a = assigned_virtual_iterates(&trace).unwrap();
    for t in 0..=trace.len() {
        let x = trace.snapshot(t).unwrap();
        let open: Vec<usize> = trace
            .jobs
            .iter()
            .enumerate()
            .filter(|(_, j)| j.ledger_index() <= t && j.received_step.is_none_or(|s| s >= t))
            .map(|(id, _)| id)
            .collect();
        assert!(open.len() <= 1);
        let diff: Vec<f64> = x.iter().zip(a.iterates[t].iter()).map(|(p, q)| p - q).collect();
        let expected: Vec<f64> = match open.first() {
            Some(&id) => trace.job_gradients[id].iter().map(|g| trace.step_size * g).collect(),
            None => vec![0.0; 4],
        };
        assert!(dist(&diff, &expected) <= 1e-12, "t = {t}");
    }
}

#[test]
fn report_files_round_trip() {
    let ds = syn(4, 12, 5, 9);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let cfg = RunConfig::new(
        "shuffled".parse().unwrap(),
        0.02,
        50,
        TimingModel::linear(TimingKind::Poisson, 4),
        1,
    );
    let traces = vec![
        run(obj, &cfg).unwrap(),
        run(obj, &RunConfig { seed: 2, ..cfg }).unwrap(),
    ];
    let opts = DiagnoseOptions {
        tau: Some(4),
        ..Default::default()
    };
    let rep = diagnose(&traces, &obj, &opts).unwrap();
    assert_eq!(rep.get("tau"), Some(4.0));
    assert_eq!(rep.get("runs"), Some(2.0));
    assert_eq!(rep.get("tau_c"), Some(4.0));
    let dir = tempfile::tempdir().unwrap();
    rep.write(dir.path()).unwrap();
    let q = read_quantity_csv(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(q.len(), rep.quantities.len());
    for ((k, v), (k2, v2)) in q.iter().zip(&rep.quantities) {
        assert_eq!(k, k2);
        assert!(v == v2 || (v.is_nan() && v2.is_nan()));
    }
    assert_eq!(
        read_chunk_csv(dir.path().join("sigma_received.csv")).unwrap(),
        rep.sigma_sq_received
    );
    assert_eq!(
        read_chunk_csv(dir.path().join("sigma_assigned.csv")).unwrap(),
        rep.sigma_sq_assigned
    );
}

#[test]
fn sparse_snapshots_are_a_cadence_error() {
    let ds = syn(3, 10, 4, 10);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let mut cfg = RunConfig::new(
        "pure".parse().unwrap(),
        0.02,
        30,
        TimingModel::linear(TimingKind::Poisson, 3),
        1,
    );
    cfg.snapshot_every = 5;
    let trace = run(obj, &cfg).unwrap();
    let err = virtual_iterates(&trace, 3, &obj).unwrap_err();
    assert!(matches!(err, asgrad::Error::Cadence(_)), "{err}");
    let err = sequence_correlation(std::slice::from_ref(&trace), 3, Process::Received, &obj).unwrap_err();
    assert!(matches!(err, asgrad::Error::Cadence(_)), "{err}");
    // The assigned shadow falls back to replaying the stored gradients.
    let a = assigned_virtual_iterates(&trace).unwrap();
    assert!(a.lemma_max_residual <= 1e-9 * (1.0 + a.max_x_norm));
}
