use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgdlab::harness::{run_experiment, ExperimentConfig, OracleSpec, ProblemSpec};
use sgdlab::lyapunov::{energy_monotone_threshold, scalars, select_zeta};
use sgdlab::optimizers::{
    msgd_classical_step, msgd_damped_step, run, CheckpointPlan, IterState, Method, RunOptions,
};
use sgdlab::oracles::{gaussian_oracle, minibatch_oracle, relative_noise_oracle, GradientOracle, OracleSample};
use sgdlab::problems::{least_squares_sum, pseudo_huber, quadratic, smooth_rastrigin, FiniteSumProblem, Problem};
use sgdlab::schedules::{PowerSchedule, StepSchedule};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn problem_strategy() -> impl Strategy<Value = Problem> {
    prop_oneof![
        (prop::collection::vec(0.0..20.0f64, 1..5), any::<u64>()).prop_map(|(spectrum, seed)| {
            let star: Vec<f64> = spectrum.iter().enumerate().map(|(i, _)| ((seed >> i) & 7) as f64 - 3.5).collect();
            quadratic(&spectrum, &star).unwrap()
        }),
        (1usize..5).prop_map(|d| pseudo_huber(d).unwrap()),
        (1usize..4, 0.1..20.0f64).prop_map(|(d, a)| smooth_rastrigin(d, a).unwrap()),
    ]
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim)
}

fn finite_sum() -> impl Strategy<Value = FiniteSumProblem> {
    (1usize..4, 1usize..6).prop_flat_map(|(d, rows)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), rows),
            prop::collection::vec(-3.0..3.0f64, rows),
        )
            .prop_map(|(a, b)| least_squares_sum(&a, &b).unwrap())
    })
}

proptest! {
    #[test]
    fn step_size_is_the_power_law(c in 0.01..10.0f64, a in 0.0..1.5f64, k in 1u64..10_000_000) {
        let s = PowerSchedule::step_only(c, a).unwrap();
        let expect = if a == 0.0 { c } else { c * (k as f64).powf(-a) };
        prop_assert_eq!(s.alpha(k), expect);
    }

    #[test]
    fn square_summable_implies_tail_condition(a in 0.0..1.5f64, b in 0.0..0.99f64, m in 0.0..2.0f64) {
        let class = PowerSchedule::new(1.0, a, m, b).unwrap().class();
        prop_assert!(!class.square_summable || class.thm22_condition);
    }

    #[test]
    fn gradient_is_lipschitz(
        (p, x, y) in problem_strategy().prop_flat_map(|p| {
            let d = p.dim();
            (Just(p), point(d), point(d))
        })
    ) {
        let lhs = dist(&p.gradient(&x), &p.gradient(&y));
        prop_assert!(lhs <= p.smoothness_l() * dist(&x, &y) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn aggregate_is_the_component_average(
        (fsp, x) in finite_sum().prop_flat_map(|f| {
            let d = f.aggregate().dim();
            (Just(f), prop::collection::vec(-10.0..10.0f64, d))
        })
    ) {
        let n = fsp.components().len() as f64;
        let value: f64 = fsp.components().iter().map(|c| c.value(&x)).sum::<f64>() / n;
        let agg = fsp.aggregate();
        prop_assert!((agg.value(&x) - value).abs() <= 1e-12 * (1.0 + value.abs()));
        let mut grad = vec![0.0; x.len()];
        for c in fsp.components() {
            for (g, ci) in grad.iter_mut().zip(c.gradient(&x)) {
                *g += ci / n;
            }
        }
        let scale = 1.0 + grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        prop_assert!(dist(&agg.gradient(&x), &grad) <= 1e-12 * scale);
    }

    #[test]
    fn zeta_keeps_the_dissipation_positive(l in 0.01..100.0f64, lo in 0.01..4.0f64, extra in 0.0..4.0f64) {
        let hi = lo + extra;
        let zeta = select_zeta(l, lo, hi).unwrap();
        prop_assert!(zeta > 0.0);
        prop_assert!(hi * hi / 4.0 * zeta + l * zeta <= lo / 2.0 + 1e-12);
    }

    #[test]
    fn cross_term_is_bounded_by_half_the_dissipation(
        (p, x, v, w) in problem_strategy().prop_flat_map(|p| {
            let d = p.dim();
            (Just(p), point(d), point(d), 0.0..1.0f64)
        })
    ) {
        let s = scalars(&p, &x, &v, w).unwrap();
        prop_assert!(s.z_tilde.abs() <= 0.5 * s.h_bar * (1.0 + 1e-14));
        prop_assert!(s.h >= 0.0);
        prop_assert!(s.h_tilde >= s.h - w * 0.5 * s.h_bar - 1e-12 * (1.0 + s.h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_vsgd_is_gradient_descent(
        (p, x0) in problem_strategy().prop_flat_map(|p| { let d = p.dim(); (Just(p), point(d)) }),
        c in 0.001..0.05f64,
        a in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let o = gaussian_oracle(&p, 0.0).unwrap();
        let s = PowerSchedule::step_only(c, a).unwrap();
        let opts = RunOptions { plan: CheckpointPlan::Every { stride: 1 }, lyapunov: None, averaged: false };
        let t = run(Method::Vsgd, &o, &s, &x0, 40, seed, &opts).unwrap();
        let mut x = x0.clone();
        for (k, state) in (1u64..).zip(&t.states) {
            let g = p.gradient(&x);
            let alpha = s.alpha(k);
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= alpha * gi;
            }
            prop_assert_eq!(&state.x, &x);
        }
    }

    #[test]
    fn heavy_ball_matches_damped_momentum(
        lambda in 0.0..10.0f64,
        mu in 0.1..3.0f64,
        alpha in 0.01..0.3f64,
        x0 in -5.0..5.0f64,
        v0 in -5.0..5.0f64,
    ) {
        prop_assume!(mu * alpha < 1.0);
        let p = quadratic(&[lambda], &[0.0]).unwrap();
        let mut damped = IterState { k: 0, x: vec![x0], v: vec![v0], x_prev: vec![x0] };
        let mut classical = IterState { k: 0, x: vec![x0], v: vec![alpha * v0], x_prev: vec![x0] };
        for _ in 0..50 {
            let g = OracleSample::from_parts(p.gradient(&damped.x), vec![0.0]);
            let gc = OracleSample::from_parts(p.gradient(&classical.x), vec![0.0]);
            damped = msgd_damped_step(&damped, &g, alpha, mu).unwrap();
            classical = msgd_classical_step(&classical, &gc, alpha * alpha, 1.0 - mu * alpha).unwrap();
            let scale = 1.0 + damped.x[0].abs();
            prop_assert!((damped.x[0] - classical.x[0]).abs() <= 1e-12 * scale);
            prop_assert!((alpha * damped.v[0] - classical.v[0]).abs() <= 1e-12 * (1.0 + classical.v[0].abs()));
        }
    }

    #[test]
    fn energy_never_rises_below_the_threshold(
        spectrum in prop::collection::vec(0.0..10.0f64, 1..4),
        mu in 0.1..3.0f64,
        frac in 0.01..1.0f64,
        x0 in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let l_max = spectrum.iter().copied().fold(0.0, f64::max);
        let alpha = frac * energy_monotone_threshold(l_max, mu);
        prop_assume!(mu * alpha <= 1.0);
        let d = spectrum.len();
        let p = quadratic(&spectrum, &vec![0.0; d]).unwrap();
        let energy = |s: &IterState| p.value(&s.x) + 0.5 * s.v.iter().map(|v| v * v).sum::<f64>();
        let mut s = IterState::new(&x0[..d]);
        let mut prev = energy(&s);
        for _ in 0..200 {
            let g = OracleSample::from_parts(p.gradient(&s.x), vec![0.0; d]);
            s = msgd_damped_step(&s, &g, alpha, mu).unwrap();
            let e = energy(&s);
            prop_assert!(e <= prev * (1.0 + 1e-12) + 1e-300);
            prev = e;
        }
    }

    #[test]
    fn averaged_iterate_obeys_jensen(
        d in 1usize..4,
        sigma in 0.0..2.0f64,
        a in 0.3..1.0f64,
        seed in any::<u64>(),
        use_quadratic in any::<bool>(),
    ) {
        let p = if use_quadratic {
            quadratic(&vec![2.0; d], &vec![1.0; d]).unwrap()
        } else {
            pseudo_huber(d).unwrap()
        };
        let o = gaussian_oracle(&p, sigma).unwrap();
        let s = PowerSchedule::step_only(0.4, a).unwrap();
        let opts = RunOptions { plan: CheckpointPlan::Every { stride: 7 }, lyapunov: None, averaged: true };
        let t = run(Method::Vsgd, &o, &s, &vec![3.0; d], 300, seed, &opts).unwrap();
        for c in &t.states {
            prop_assert!(c.avg_f.unwrap() <= c.weighted_f.unwrap() + 1e-10);
        }
    }
}

fn unbiased_everywhere(o: &GradientOracle, seed: u64) {
    let d = o.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..d).map(|_| rand::Rng::random_range(&mut rng, -10.0..10.0)).collect())
        .collect();
    let n = 100_000usize;
    let mut draw = OracleSample::zeros(d);
    for x in &points {
        let (mut sum, mut sum_sq) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..n {
            o.sample_into(x, &mut rng, &mut draw);
            for j in 0..d {
                sum[j] += draw.noise[j];
                sum_sq[j] += draw.noise[j] * draw.noise[j];
            }
        }
        for j in 0..d {
            let mean = sum[j] / n as f64;
            let var = (sum_sq[j] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(mean.abs() <= 4.0 * se + 1e-12, "{} at {x:?}: mean {mean} se {se}", o.label());
        }
    }
}

#[test]
fn every_oracle_is_unbiased() {
    let rastrigin = smooth_rastrigin(2, 10.0).unwrap();
    let huber = pseudo_huber(3).unwrap();
    let ls = least_squares_sum(
        &[vec![1.0, 0.5, -0.2], vec![0.3, -1.0, 0.8], vec![-0.7, 0.2, 1.1], vec![1.5, 0.4, 0.3]],
        &[0.4, -0.3, 0.9, 1.2],
    )
    .unwrap();
    unbiased_everywhere(&gaussian_oracle(&rastrigin, 0.7).unwrap(), 11);
    unbiased_everywhere(&relative_noise_oracle(&huber, 0.5).unwrap(), 12);
    unbiased_everywhere(&minibatch_oracle(&ls, 2).unwrap(), 13);
}

fn calibration(replicas: usize, seed: u64) -> f64 {
    let cfg = ExperimentConfig {
        method: Method::Vsgd,
        problem: ProblemSpec::Quadratic {
            spectrum: vec![1.0, 2.0],
            x_star: None,
        },
        oracle: OracleSpec::Gaussian { sigma: 1.0 },
        schedule: PowerSchedule::step_only(0.5, 0.7).unwrap(),
        x0: vec![1.0, -1.0],
        horizon: 1000,
        replicas,
        master_seed: seed,
        checkpoints: CheckpointPlan::Log { per_decade: 1 },
        lyapunov: false,
        averaged: false,
        x0_jitter: 0.0,
    };
    run_experiment(&cfg).unwrap().final_row().se_grad_sq
}

#[test]
fn standard_errors_shrink_with_replicas() {
    let ratio = calibration(1600, 91) / calibration(800, 92);
    let target = std::f64::consts::FRAC_1_SQRT_2;
    assert!(
        (target * 0.8..=target * 1.25).contains(&ratio),
        "se ratio {ratio} outside [{}, {}]",
        target * 0.8,
        target * 1.25
    );
}
