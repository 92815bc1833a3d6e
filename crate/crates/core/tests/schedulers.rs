use asgrad::data::{generate_synthetic, SynConfig};
use asgrad::engine::{init_with_strategy, run, RunConfig, TimingKind, TimingModel, Trace};
use asgrad::rng::{stream, RandomStream};
use asgrad::schedulers::{PureAsync, PureWaiting, ShuffleMode, Shuffled};
use asgrad::{Dataset, Objective};

fn syn(n: usize, seed: u64) -> Dataset {
    generate_synthetic(&SynConfig {
        alpha: 1.0,
        beta: 1.0,
        n,
        m: 10,
        d: 4,
        seed,
    })
    .unwrap()
}

fn assigned_workers(trace: &Trace) -> Vec<usize> {
    trace
        .records
        .iter()
        .flat_map(|r| r.assigned.iter().map(|a| a.worker))
        .collect()
}

#[test]
fn shuffled_starts_from_given_permutation() {
    let ds = syn(3, 1);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let cfg = RunConfig::new(
        "shuffled".parse().unwrap(),
        0.01,
        6,
        TimingModel::linear(TimingKind::Poisson, 3),
        4,
    );
    let strategy = Box::new(Shuffled::with_permutation(vec![2, 0, 1], ShuffleMode::EveryCycle));
    let mut state = init_with_strategy(obj, &cfg, strategy).unwrap();
    for _ in 0..6 {
        state.step().unwrap();
    }
    let workers = assigned_workers(&state.finish());
    assert_eq!(&workers[..3], &[2, 0, 1]);
    let mut second = workers[3..].to_vec();
    second.sort_unstable();
    assert_eq!(second, [0, 1, 2]);
}

#[test]
fn shuffled_cycles_are_fair() {
    let n = 7;
    let ds = syn(n, 2);
    let obj = Objective::new(&ds, 0.1).unwrap();
    for spec in ["shuffled:mode=cycle", "shuffled:mode=once"] {
        let cfg = RunConfig::new(
            spec.parse().unwrap(),
            0.01,
            10 * n,
            TimingModel::linear(TimingKind::Normal, n),
            5,
        );
        let workers = assigned_workers(&run(obj, &cfg).unwrap());
        for cycle in workers.chunks(n) {
            let mut c = cycle.to_vec();
            c.sort_unstable();
            assert_eq!(c, (0..n).collect::<Vec<_>>(), "{spec}");
        }
    }
}

#[test]
fn waiting_with_one_slot_is_pure() {
    let ds = syn(4, 3);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let cfg = RunConfig::new(
        "pure".parse().unwrap(),
        0.01,
        80,
        TimingModel::linear(TimingKind::Poisson, 4),
        6,
    );
    let run_with = |s: Box<dyn asgrad::Strategy>| {
        let mut state = init_with_strategy(obj, &cfg, s).unwrap();
        for _ in 0..80 {
            state.step().unwrap();
        }
        state.finish()
    };
    let a = run_with(Box::new(PureAsync));
    let b = run_with(Box::new(PureWaiting::new(1)));
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.final_x, b.final_x);
}

#[test]
fn random_follows_the_strategy_stream() {
    let n = 5;
    let ds = syn(n, 4);
    let obj = Objective::new(&ds, 0.1).unwrap();
    let cfg = RunConfig::new(
        "random".parse().unwrap(),
        0.01,
        100,
        TimingModel::linear(TimingKind::Poisson, n),
        12,
    );
    let trace = run(obj, &cfg).unwrap();
    let mut rng = RandomStream::new(12).fork(stream::STRATEGY);
    let expected: Vec<usize> = (0..100).map(|_| rng.index(n)).collect();
    assert_eq!(assigned_workers(&trace), expected);
}

#[test]
fn waiting_rounds_share_one_model_index() {
    let n = 6;
    let ds = syn(n, 5);
    let obj = Objective::new(&ds, 0.1).unwrap();
    for (spec, b) in [("pure-wait:b=3", 3), ("random-wait:b=2", 2), ("random-wait:b=6", 6)] {
        let cfg = RunConfig::new(
            spec.parse().unwrap(),
            0.01,
            120,
            TimingModel::linear(TimingKind::Uniform, n),
            7,
        );
        let trace = run(obj, &cfg).unwrap();
        for r in &trace.records {
            if r.assigned.is_empty() {
                continue;
            }
            assert_eq!(r.assigned.len(), b, "{spec}");
            let alpha = r.assigned[0].model_index;
            assert_eq!(alpha % b, 0);
            assert!(r.assigned.iter().all(|a| a.model_index == alpha));
            assert_eq!(alpha, (r.t + 1) / b * b);
        }
    }
}

#[test]
fn sequential_reductions_have_structural_delays() {
    let ds = syn(3, 6).points_as_workers(30).unwrap();
    let obj = Objective::new(&ds, 0.1).unwrap();
    let timing = TimingModel::linear(TimingKind::Poisson, 30);
    let rr = run(obj, &RunConfig::new("rr".parse().unwrap(), 0.01, 90, timing.clone(), 1)).unwrap();
    assert!(rr.delays().iter().all(|&d| d == 0));
    for epoch in rr.workers().chunks(30) {
        let mut e = epoch.to_vec();
        e.sort_unstable();
        assert_eq!(e, (0..30).collect::<Vec<_>>());
    }
    let mb = run(
        obj,
        &RunConfig::new("minibatch:b=5".parse().unwrap(), 0.01, 100, timing, 1),
    )
    .unwrap();
    let stats = asgrad::delay_stats(&mb).unwrap();
    assert_eq!(stats.tau_max, 4);
    for (t, d) in mb.delays().iter().enumerate() {
        assert_eq!(*d, t % 5);
    }
}
