use mfgp_core::benchmarks::{
    self, evaluation_points, generate_observations, make_problem, rel_l2_error,
};
use mfgp_core::model::{train, Source, TrainConfig};
use mfgp_core::operators::apply_operator_numeric;
use mfgp_core::posterior::{predict_f, predict_u, run_active_loop};

fn config(seed: u64, restarts: usize) -> TrainConfig {
    TrainConfig {
        seed,
        restarts,
        ..TrainConfig::default()
    }
}

#[test]
fn high_fidelity_noise_has_configured_spread() {
    let p = make_problem("integro1d").unwrap();
    let mut residuals = Vec::new();
    let mut seed = 0;
    while residuals.len() < 10_000 {
        let ds = generate_observations(&p, seed).unwrap();
        let high = ds.block(Source::High);
        for (x, y) in high.points().zip(high.values()) {
            residuals.push(y - (p.f_high)(x));
        }
        seed += 1;
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let target = p.noise_std[2];
    assert!((sd / target - 1.0).abs() < 0.05, "sd {sd} vs {target}");
}

#[test]
fn integro_low_fidelity_is_shifted_high_fidelity() {
    let p = make_problem("integro1d").unwrap();
    for i in 0..=20 {
        let x = [i as f64 / 20.0];
        let expected = 0.8 * (p.f_high)(&x) - 5.0 * x[0];
        assert_eq!((p.f_low)(&x), expected);
    }
}

#[test]
fn zero_budget_keeps_only_initial_entry() {
    let p = make_problem("integro1d").unwrap();
    let candidates = evaluation_points(&p).unwrap();
    let out = run_active_loop(&p, 0, &config(3, 2), &candidates).unwrap();
    assert_eq!(out.history.iterations.len(), 1);
    assert_eq!(out.history.iterations[0].sizes, p.sample_sizes);
}

#[test]
fn active_loop_is_repeatable() {
    let p = make_problem("integro1d").unwrap();
    let candidates = evaluation_points(&p).unwrap();
    let run = || {
        run_active_loop(&p, 3, &config(11, 2), &candidates)
            .unwrap()
            .history
            .iterations
            .into_iter()
            .map(|it| it.selected)
            .collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a.len(), 4);
    assert_eq!(a, run());
}

/// Applying the operator numerically to the solution posterior mean should
/// give the forcing posterior mean.
#[test]
fn forcing_mean_is_operator_applied_to_solution_mean() {
    let p = make_problem("integro1d").unwrap();
    let ds = generate_observations(&p, 0).unwrap();
    let m = train(ds, &p.operator, &config(0, 10)).unwrap();
    let mean_u = |x: &[f64]| predict_u(&m, &[x]).unwrap().mean[0];
    let ls = [0.1];
    let pts = evaluation_points(&p).unwrap();
    let applied: Vec<f64> = pts
        .iter()
        .map(|x| apply_operator_numeric(&p.operator, &mean_u, x, &ls).unwrap())
        .collect();
    let f = predict_f(&m, &pts).unwrap();
    let err = rel_l2_error(&applied, &f.mean).unwrap();
    assert!(err < 1e-2, "relative difference {err}");
}

#[test]
fn multi_fidelity_beats_single_fidelity_on_seed_zero() {
    let p = make_problem("integro1d").unwrap();
    let sf = p.single_fidelity();
    let pts = evaluation_points(&p).unwrap();
    let exact: Vec<f64> = pts.iter().map(|x| (p.u_exact.unwrap())(x)).collect();
    let err = |problem: &benchmarks::ProblemSpec| {
        let ds = generate_observations(problem, 0).unwrap();
        let m = train(ds, &problem.operator, &config(0, 10)).unwrap();
        rel_l2_error(&predict_u(&m, &pts).unwrap().mean, &exact).unwrap()
    };
    let (mf, single) = (err(&p), err(&sf));
    assert!(
        mf < single,
        "multi-fidelity {mf} vs single-fidelity {single}"
    );
}
