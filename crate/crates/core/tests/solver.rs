mod common;

use kdrsdl::solver::augmented_lagrangian;
use kdrsdl::synth::{generate, SyntheticSpec};
use kdrsdl::{errors_of, initialize, iterate, solve, SolverConfig, SolverState, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_problem(seed: u64) -> (Tensor3, SolverConfig) {
    let spec = SyntheticSpec {
        m: 12,
        n: 10,
        depth: 5,
        rank_a: 3,
        rank_b: 3,
        r: 4,
        zero_prob: 0.8,
        seed,
    };
    let (x, _) = generate(&spec).unwrap();
    (x, SolverConfig::for_shape(12, 10).with_rank(4))
}

type Block = fn(&mut SolverState, &Tensor3, &SolverConfig);

const BLOCKS: [(&str, Block); 5] = [
    ("E", |s, x, c| s.update_outliers(x, c).unwrap()),
    ("A", |s, x, _| s.update_a(x).unwrap()),
    ("B", |s, x, _| s.update_b(x).unwrap()),
    ("K", |s, x, _| s.update_split(x).unwrap()),
    ("R", |s, _, c| s.update_core(c).unwrap()),
];

#[test]
fn every_primal_block_update_is_a_descent_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20 {
        let (x, cfg) = desk_problem(trial);
        let mut state = initialize(&x, &cfg).unwrap();
        for _ in 0..rng.random_range(0..15) {
            state = iterate(state, &x, &cfg).unwrap();
        }
        let mut before = augmented_lagrangian(&state, &x, &cfg).unwrap();
        for (name, update) in BLOCKS {
            update(&mut state, &x, &cfg);
            let after = augmented_lagrangian(&state, &x, &cfg).unwrap();
            assert!(
                after <= before + 1e-8 * before.abs().max(1.0),
                "trial {trial}, iteration {}: {name} update raised the Lagrangian {before} -> {after}",
                state.iter
            );
            before = after;
        }
    }
}

#[test]
fn block_updates_are_minimizers_not_just_descent() {
    // perturbing the freshly updated A in any direction cannot lower the objective
    let (x, cfg) = desk_problem(3);
    let mut state = initialize(&x, &cfg).unwrap();
    for _ in 0..4 {
        state = iterate(state, &x, &cfg).unwrap();
    }
    state.update_outliers(&x, &cfg).unwrap();
    state.update_a(&x).unwrap();
    let best = augmented_lagrangian(&state, &x, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mut moved = state.clone();
        let dir = kdrsdl::Matrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
        moved.a += dir * 1e-4;
        assert!(augmented_lagrangian(&moved, &x, &cfg).unwrap() >= best - 1e-9 * best.abs());
    }
}

#[test]
fn split_update_solves_its_stein_equation() {
    let (x, cfg) = desk_problem(9);
    let mut state = initialize(&x, &cfg).unwrap();
    for _ in 0..3 {
        state = iterate(state, &x, &cfg).unwrap();
    }
    state.update_outliers(&x, &cfg).unwrap();
    state.update_a(&x).unwrap();
    state.update_b(&x).unwrap();
    let problems: Vec<_> = (0..x.depth()).map(|k| state.split_problem(&x, k).unwrap()).collect();
    state.update_split(&x).unwrap();
    for (k, p) in problems.iter().enumerate() {
        let kk = state.split.frontal_slice(k).unwrap();
        let res = common::stein_residual(p, &kk);
        assert!(res <= 1e-10 * p.constant.norm().max(1.0), "slice {k}: residual {res:e}");
    }
}

#[test]
fn step_sizes_grow_geometrically_to_the_cap() {
    let (x, mut cfg) = desk_problem(4);
    cfg.mu_cap_factor = 100.0;
    cfg.epsilon = 1e-30;
    cfg.max_iter = 40;
    let state0 = initialize(&x, &cfg).unwrap();
    let fit = solve(&x, &cfg).unwrap();
    assert!(!fit.converged);
    for (t, row) in fit.trace.iter().enumerate() {
        let want = (state0.mu * cfg.rho.powi(t as i32)).min(state0.mu * 100.0);
        assert!((row.mu - want).abs() <= 1e-12 * want, "iteration {}", row.iter);
        let want_k = (state0.mu_k * cfg.rho.powi(t as i32)).min(state0.mu_k * 100.0);
        assert!((row.mu_k - want_k).abs() <= 1e-12 * want_k);
    }
    assert_eq!(fit.trace.last().unwrap().mu, state0.mu * 100.0);
}

#[test]
fn trace_matches_recomputed_errors() {
    let (x, cfg) = desk_problem(5);
    let mut state = initialize(&x, &cfg).unwrap();
    let fit = solve(&x, &cfg).unwrap();
    for row in fit.trace.iter().take(10) {
        state = iterate(state, &x, &cfg).unwrap();
        let res = errors_of(&state, &x).unwrap();
        assert_eq!(row.iter, state.iter);
        assert_eq!(row.err_rec.to_bits(), res.rec.to_bits());
        assert_eq!(row.err_split.to_bits(), res.split.to_bits());
    }
}

#[test]
fn bit_identical_across_thread_counts() {
    let (x, cfg) = desk_problem(6);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve(&x, &cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.iterations, four.iterations);
    let bits = |t: &Tensor3| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one.core), bits(&four.core));
    assert_eq!(bits(&one.outliers), bits(&four.outliers));
    assert_eq!(one.a, four.a);
    assert_eq!(one.b, four.b);
    assert_eq!(one.trace, four.trace);
}

#[test]
fn zero_data_converges_immediately() {
    let x = Tensor3::zeros(6, 5, 3);
    let fit = solve(&x, &SolverConfig::for_shape(6, 5)).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.iterations, 1);
    assert_eq!(fit.trace.len(), 1);
    assert_eq!(fit.low_rank().unwrap().norm(), 0.0);
    assert_eq!(fit.outliers.norm(), 0.0);
}

#[test]
fn recovers_corrupted_synthetic_data() {
    let spec = SyntheticSpec {
        m: 30,
        n: 25,
        depth: 10,
        rank_a: 3,
        rank_b: 4,
        r: 6,
        zero_prob: 0.8,
        seed: 12,
    };
    let (x, truth) = generate(&spec).unwrap();
    let fit = solve(&x, &SolverConfig::for_shape(30, 25).with_rank(6)).unwrap();
    assert!(fit.converged);
    let err = kdrsdl::metrics::relative_error(&fit.low_rank().unwrap(), &truth.low_rank).unwrap();
    assert!(err <= 1e-5, "{err:e}");
    let same_support = fit
        .outliers
        .as_slice()
        .iter()
        .zip(truth.outliers.as_slice())
        .all(|(e, t)| (*e != 0.0) == (*t != 0.0));
    assert!(same_support);
}

#[test]
fn rejects_bad_configuration() {
    let (x, cfg) = desk_problem(1);
    assert!(solve(&x, &cfg.clone().with_rank(11)).is_err());
    assert!(solve(&x, &cfg.clone().with_lambda(-1.0)).is_err());
    let mut c = cfg;
    c.rho = 1.0;
    assert!(solve(&x, &c).is_err());
}
