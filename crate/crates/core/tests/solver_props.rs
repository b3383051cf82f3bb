mod common;

use common::random_synthesis_problem;
use passive_ifir::ifir::{eval_ifir, IfirParams};
use passive_ifir::signals::Signal;
use passive_ifir::solver::{
    constraint_violation, synthesize_passive, EpsilonSetting, SolverSettings, SynthesisProblem, SynthesisReport,
};
use passive_ifir::vrft::{build_regression_with, RegressionOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn without_time(mut rep: SynthesisReport) -> SynthesisReport {
    rep.wall_time_s = 0.0;
    rep
}

#[test]
fn solutions_are_feasible_and_ordered() {
    for seed in 100..120 {
        let prob = random_synthesis_problem(seed);
        let rep = synthesize_passive(&prob).unwrap();
        let x = prob.pack(&rep.params).unwrap();
        let eps = prob.epsilon().unwrap();
        assert!(constraint_violation(&prob, &x, eps, prob.settings.grid_m) <= 1e-7, "seed {seed}");
        assert!(rep.certificate.verdict, "seed {seed}");
        assert!(rep.objective_value >= rep.unconstrained_objective - 1e-12, "seed {seed}");
    }
}

#[test]
fn larger_margin_never_helps() {
    for seed in 200..206 {
        let base = random_synthesis_problem(seed);
        let bound = base.epsilon().unwrap();
        let mut last = f64::NEG_INFINITY;
        for eps in [0.5 * bound, bound, 1.5 * bound] {
            let mut prob = base.clone();
            prob.settings.epsilon = EpsilonSetting::Value(eps);
            let rep = synthesize_passive(&prob).unwrap();
            assert!(rep.objective_value >= last * (1.0 - 1e-6), "seed {seed}: {} < {last}", rep.objective_value);
            last = rep.objective_value;
        }
    }
}

#[test]
fn reports_are_deterministic() {
    for seed in 300..305 {
        let prob = random_synthesis_problem(seed);
        let a = without_time(synthesize_passive(&prob).unwrap());
        let b = without_time(synthesize_passive(&prob).unwrap());
        assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_solution_is_the_boundary_projection(gain in -3.0f64..3.0, frac in 0.0f64..0.95, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Signal::from_fn(0.01, 50, 1, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let u = eval_ifir(&IfirParams::siso(&[gain], 0.0, 0.01).unwrap(), &e).unwrap();
        let opts = RegressionOptions { include_gamma: false, ..Default::default() };
        let reg = build_regression_with(&e, &u, 1, &opts).unwrap();
        // one tap: F = 2 H_0 on every grid point, box [eps / 2, rho0]
        let eps = 2.0 * frac;
        let settings = SolverSettings {
            rho0: 1.0,
            rho: 0.5,
            grid_m: 4,
            epsilon: EpsilonSetting::Value(eps),
            ridge: Some(0.0),
            ..Default::default()
        };
        let prob = SynthesisProblem::from_regression(&reg, settings).unwrap();
        let rep = synthesize_passive(&prob).unwrap();
        let h = rep.params.taps[0][(0, 0)];
        let expected = gain.clamp(0.5 * eps, 1.0);
        prop_assert!((h - expected).abs() <= 1e-7, "{} vs {}", h, expected);
        prop_assert!(((h - gain).abs() - (expected - gain).abs()).abs() <= 1e-7);
    }
}
