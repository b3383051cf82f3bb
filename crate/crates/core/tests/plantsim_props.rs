use nalgebra::DMatrix;
use passive_ifir::lti::{simulate_lti, DiscreteSs, Discretization};
use passive_ifir::plantsim::{
    coupled_cartesian_plant, flexible_joint_plant, is_positive_real, random_passive_plant, resonances,
    CoupledCartesianParams, FlexibleJointParams, FlexibleMode,
};
use passive_ifir::signals::Signal;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID: usize = 10_001;

fn random_joint(seed: u64) -> FlexibleJointParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = (0..rng.random_range(0..=3))
        .map(|_| {
            FlexibleMode::from_frequency(
                rng.random_range(0.01..0.2),
                rng.random_range(2.0..80.0),
                rng.random_range(0.01..0.3),
            )
        })
        .collect();
    FlexibleJointParams {
        motor_inertia: rng.random_range(0.005..0.1),
        motor_damping: rng.random_range(0.01..1.0),
        modes,
    }
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

fn random_cartesian(seed: u64) -> CoupledCartesianParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let stiffness = if rng.random_bool(0.5) {
        random_spd(&mut rng, n, 0.0) * 10.0
    } else {
        DMatrix::zeros(n, n)
    };
    CoupledCartesianParams {
        inertia: random_spd(&mut rng, n, 0.5),
        damping: random_spd(&mut rng, n, 0.5) * 5.0,
        stiffness,
    }
}

/// Running sum of `u^T y ts` from rest; returns the smallest prefix value.
fn min_supply(sys: &DiscreteSs, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, inputs) = sys.dims();
    let u = Signal::from_fn(sys.ts, 3000, inputs, |_, _| rng.random_range(-1.0..1.0)).unwrap();
    let y = simulate_lti(sys, &u, None).unwrap();
    let mut acc = 0.0;
    let mut low: f64 = 0.0;
    for k in 0..u.len() {
        acc += u.at(k).dot(&y.at(k)) * sys.ts;
        low = low.min(acc);
    }
    low
}

#[test]
fn presets_are_positive_real() {
    for p in [FlexibleJointParams::long_plate(), FlexibleJointParams::short_plate()] {
        assert!(is_positive_real(&flexible_joint_plant(&p).unwrap(), GRID).unwrap().verdict);
    }
    let cart = coupled_cartesian_plant(&CoupledCartesianParams::cartesian3()).unwrap();
    assert!(is_positive_real(&cart, GRID).unwrap().verdict);
}

#[test]
fn short_plate_resonates_higher() {
    let long = resonances(&flexible_joint_plant(&FlexibleJointParams::long_plate()).unwrap());
    let short = resonances(&flexible_joint_plant(&FlexibleJointParams::short_plate()).unwrap());
    assert!(short[0] > long[0], "{short:?} vs {long:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_plants_are_positive_real(seed in 0u64..100_000) {
        let plant = flexible_joint_plant(&random_joint(seed)).unwrap();
        prop_assert!(is_positive_real(&plant, GRID).unwrap().verdict);
        let disc = plant.discretize(1e-3, Discretization::Tustin).unwrap();
        prop_assert!(min_supply(&disc, seed) >= -1e-9);
    }

    #[test]
    fn cartesian_plants_are_positive_real(seed in 0u64..100_000) {
        let plant = coupled_cartesian_plant(&random_cartesian(seed)).unwrap();
        prop_assert!(is_positive_real(&plant, GRID).unwrap().verdict);
        let disc = plant.discretize(1e-3, Discretization::Tustin).unwrap();
        prop_assert!(min_supply(&disc, seed) >= -1e-9);
    }

    #[test]
    fn random_plants_are_positive_real(seed in 0u64..100_000, order in 1usize..6, n in 1usize..4) {
        let plant = random_passive_plant(seed, order, n).unwrap();
        prop_assert!(is_positive_real(&plant, GRID).unwrap().verdict);
        prop_assert!(min_supply(&plant, seed) >= -1e-9);
    }
}
