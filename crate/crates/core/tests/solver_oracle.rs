mod common;

use common::random_synthesis_problem;
use passive_ifir::solver::{
    constraint_violation, cross_check_projected_gradient, kkt_residual, synthesize_passive, EpsilonSetting,
    SolverSettings, SynthesisProblem,
};
use passive_ifir::signals::Signal;
use passive_ifir::vrft::build_regression;

#[test]
fn main_solver_agrees_with_dual_oracle() {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let prob = random_synthesis_problem(seed);
        let main = synthesize_passive(&prob).unwrap();
        let oracle = cross_check_projected_gradient(&prob).unwrap();
        let eps = prob.epsilon().unwrap();
        for rep in [&main, &oracle] {
            let x = prob.pack(&rep.params).unwrap();
            assert!(constraint_violation(&prob, &x, eps, prob.settings.grid_m) <= 1e-7);
        }
        let rel = (main.objective_value - oracle.objective_value).abs() / oracle.objective_value.abs().max(1e-12);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst relative gap {worst}");
}

#[test]
fn hand_solved_instance_matches_exactly() {
    // u = -e forces H_0 = -1 without constraints; the closest passive point is the origin
    let e = Signal::from_channels(0.01, &[vec![1.0, -0.5, 0.8]]).unwrap();
    let reg = build_regression(&e, &e.scaled(-1.0), 1).unwrap();
    let settings = SolverSettings {
        rho0: 1.0,
        rho: 0.5,
        grid_m: 2,
        epsilon: EpsilonSetting::Value(0.0),
        ridge: Some(0.0),
        ..Default::default()
    };
    let prob = SynthesisProblem::from_regression(&reg, settings).unwrap();
    for rep in [synthesize_passive(&prob).unwrap(), cross_check_projected_gradient(&prob).unwrap()] {
        assert!(rep.params.taps[0][(0, 0)].abs() <= 1e-7, "{:?}", rep.params);
        assert!(rep.params.gamma[(0, 0)].abs() <= 1e-7);
        let kkt = kkt_residual(&prob, &rep.params).unwrap();
        assert!(kkt.stationarity <= 1e-7 && kkt.feasibility <= 1e-7 && kkt.complementarity <= 1e-7, "{kkt:?}");
    }
}
