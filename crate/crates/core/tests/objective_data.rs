use std::io::Write as _;

use asgrad::data::{generate_synthetic, load_libsvm, Dataset, SynConfig};
use asgrad::engine::{run, BatchSize, RunConfig, TimingKind, TimingModel};
use asgrad::experiment::median;
use asgrad::{Objective, RandomStream};

fn syn(alpha: f64, n: usize, m: usize, d: usize, seed: u64) -> Dataset {
    generate_synthetic(&SynConfig {
        alpha,
        beta: alpha,
        n,
        m,
        d,
        seed,
    })
    .unwrap()
}

/// Neumaier-compensated sum.
fn compensated(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

#[test]
fn loss_matches_scalar_reference() {
    let ds = syn(0.5, 10, 200, 300, 42);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let zero = vec![0.0; 300];
    let at_zero = obj.local_loss(&zero, 0).unwrap();
    assert!((at_zero - std::f64::consts::LN_2).abs() <= 1e-14);

    let x: Vec<f64> = (0..300).map(|k| ((k % 7) as f64 - 3.0) * 1e-2).collect();
    let (feats, labels) = (ds.shard_features(0), ds.shard_labels(0));
    let terms = (0..200).map(|j| {
        let margin = compensated((0..300).map(|k| feats[j * 300 + k] * x[k]));
        let z = -labels[j] * margin;
        if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        }
    });
    let reg = compensated(x.iter().map(|v| v * v / (1.0 + v * v)));
    let reference = compensated(terms) / 200.0 + 0.1 * reg;
    let got = obj.local_loss(&x, 0).unwrap();
    assert!(
        (got - reference).abs() <= 1e-12 * reference.abs(),
        "{got} vs {reference}"
    );
}

#[test]
fn global_grad_is_mean_of_independent_locals() {
    let ds = syn(1.0, 5, 20, 8, 1);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let mut rng = RandomStream::new(3);
    let x: Vec<f64> = (0..8).map(|_| rng.standard_normal()).collect();
    let mut acc = [0.0; 8];
    for i in 0..5 {
        for (a, v) in acc.iter_mut().zip(obj.local_grad(&x, i).unwrap().iter()) {
            *a += v;
        }
    }
    let mean: Vec<f64> = acc.iter().map(|v| v / 5.0).collect();
    assert_eq!(obj.global_grad(&x).unwrap().0, mean);
}

#[test]
fn gradient_at_origin_is_label_weighted_mean() {
    let ds = syn(1.0, 3, 10, 4, 2);
    let obj = Objective::new(&ds, 0.3).unwrap();
    let g = obj.global_grad(&[0.0; 4]).unwrap();
    for k in 0..4 {
        let s: f64 = (0..3)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .map(|(i, j)| {
                let (a, b) = ds.sample(i, j);
                b * a[k]
            })
            .sum();
        assert!((g[k] + s / 60.0).abs() <= 1e-14);
    }
}

#[test]
fn stochastic_mean_is_unbiased() {
    let ds = syn(1.0, 2, 40, 5, 4);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let x = [0.3, -0.2, 0.1, 0.0, 0.5];
    let exact = obj.local_grad(&x, 1).unwrap();
    let mut rng = RandomStream::new(9);
    let draws = 10_000;
    let samples: Vec<_> = (0..draws)
        .map(|_| obj.stochastic_grad(&x, 1, 4, &mut rng).unwrap())
        .collect();
    for k in 0..5 {
        let mean = samples.iter().map(|g| g[k]).sum::<f64>() / draws as f64;
        let var = samples.iter().map(|g| (g[k] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - exact[k]).abs() <= 3.0 * se + 1e-15, "coordinate {k}");
    }
    assert_eq!(obj.stochastic_grad(&x, 1, 40, &mut rng).unwrap(), exact);
}

#[test]
fn heterogeneity_grows_with_alpha_beta() {
    let zeta = |alpha: f64, seed: u64| {
        let ds = syn(alpha, 10, 200, 300, seed);
        let obj = Objective::new(&ds, 0.1).unwrap();
        let mut cfg = RunConfig::new(
            "pure".parse().unwrap(),
            0.002,
            200,
            TimingModel::linear(TimingKind::Poisson, 10),
            seed,
        );
        cfg.batch = BatchSize::Samples(20);
        cfg.snapshot_every = 50;
        cfg.keep_job_gradients = false;
        let trace = run(obj, &cfg).unwrap();
        obj.estimate_constants(&trace.snapshots).unwrap().0
    };
    let low: Vec<f64> = (0..5).map(|s| zeta(0.5, s)).collect();
    let high: Vec<f64> = (0..5).map(|s| zeta(1.5, s)).collect();
    assert!(median(&high) > median(&low), "{high:?} vs {low:?}");
}

#[test]
fn generator_is_deterministic_and_seeded() {
    let cfg = SynConfig {
        alpha: 0.5,
        beta: 0.5,
        n: 4,
        m: 30,
        d: 12,
        seed: 5,
    };
    let a = generate_synthetic(&cfg).unwrap();
    let b = generate_synthetic(&cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = generate_synthetic(&SynConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn label_balance_check_reports_the_shard() {
    let ds = Dataset::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![1.0, -1.0, 1.0, 1.0]).unwrap();
    let err = ds.check_label_balance().unwrap_err().to_string();
    assert!(err.contains("worker 1"), "{err}");
    let ok = Dataset::new(1, 2, 1, vec![1.0, 2.0], vec![1.0, -1.0]).unwrap();
    ok.check_label_balance().unwrap();
}

#[test]
fn libsvm_three_lines_single_worker() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "+1 1:0.5 3:2").unwrap();
    writeln!(f, "0 2:-1").unwrap();
    writeln!(f, "1 1:1 2:1 3:1").unwrap();
    let ds = load_libsvm(f.path(), 1).unwrap();
    assert_eq!((ds.n(), ds.m(), ds.d()), (1, 3, 3));
    assert_eq!(ds.features(), &[0.5, 0.0, 2.0, 0.0, -1.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(ds.labels(), &[1.0, -1.0, 1.0]);
    assert!(matches!(load_libsvm(f.path(), 4), Err(asgrad::Error::Parameter(_))));
}

#[test]
fn binary_file_round_trip() {
    let ds = syn(1.0, 3, 7, 5, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    ds.write_binary(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"ASGD");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
    assert_eq!(bytes.len(), 16 + 3 * 7 * 5 * 8 + 3 * 7);
    assert_eq!(Dataset::read_binary(&path).unwrap(), ds);
}
