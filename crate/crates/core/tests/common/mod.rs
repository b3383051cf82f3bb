#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use passive_ifir::ifir::{epsilon_bound, eval_ifir, popov_min_eig, popov_on_grid, IfirParams};
use passive_ifir::linalg::min_eig_herm;
use passive_ifir::lti::{simulate_lti, ContinuousTf, DiscreteSs, Discretization};
use passive_ifir::signals::{multisine, ProbeConfig, Signal};
use passive_ifir::solver::{Envelope, EpsilonSetting, SolverSettings, SynthesisProblem};
use passive_ifir::vrft::build_regression;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random iFIR on the sampled constraint set with `epsilon = epsilon_bound`.
pub struct SampledCase {
    pub params: IfirParams,
    pub grid_m: usize,
    pub rho0: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Smallest sampled Popov eigenvalue minus epsilon.
    pub sampled_slack: f64,
}

pub fn sampled_min(taps: &[DMatrix<f64>], grid_m: usize) -> f64 {
    popov_on_grid(taps, grid_m + 1)
        .iter()
        .map(min_eig_herm)
        .fold(f64::INFINITY, f64::min)
}

/// Draws envelope-respecting taps and blends them toward `H_0 = alpha I`
/// until the sampled margin holds; `on_boundary` stops exactly at it.
pub fn sampled_case(seed: u64, on_boundary: bool) -> SampledCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n: usize = rng.random_range(1..=2);
        let m: usize = rng.random_range(2..=64);
        let rho: f64 = rng.random_range(0.3..0.95);
        let rho0: f64 = rng.random_range(1.0..3.0);
        let alpha = rho0 / n as f64;
        let need = (m - 1) as f64 * std::f64::consts::PI * (1.0 - rho.powi(m as i32)) / (1.0 - rho) * n as f64 / 1.8;
        let grid_min = (need.ceil() as usize).max(2);
        if grid_min > 256 {
            continue;
        }
        let grid_m = rng.random_range(grid_min..=256);
        let epsilon = epsilon_bound(m, grid_m, rho0, rho).unwrap();
        let raw: Vec<DMatrix<f64>> = (0..m)
            .map(|k| {
                let b = rho0 * rho.powi(k as i32) / n as f64;
                DMatrix::from_fn(n, n, |_, _| rng.random_range(-b..=b))
            })
            .collect();
        let anchor = |t: f64| -> Vec<DMatrix<f64>> {
            raw.iter()
                .enumerate()
                .map(|(k, h)| {
                    let mut out = h * (1.0 - t);
                    if k == 0 {
                        out += DMatrix::identity(n, n) * (alpha * t);
                    }
                    out
                })
                .collect()
        };
        let slack = |t: f64| sampled_min(&anchor(t), grid_m) - epsilon;
        if slack(0.0) >= 0.0 {
            // boundary cases need a violating start
            if on_boundary {
                continue;
            }
        }
        let t = if slack(0.0) >= 0.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slack(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            if on_boundary {
                hi
            } else {
                hi + (1.0 - hi) * rng.random_range(0.0..0.5)
            }
        };
        let taps = anchor(t);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let gamma = &a * a.transpose();
        let sampled_slack = sampled_min(&taps, grid_m) - epsilon;
        return SampledCase {
            params: IfirParams::new(taps, gamma, 0.005).unwrap(),
            grid_m,
            rho0,
            rho,
            epsilon,
            sampled_slack,
        };
    }
}

/// Taps satisfying `F(q pi / 4) >= 0` on the coarse grid but not densely.
pub fn coarse_grid_counterexample() -> Vec<DMatrix<f64>> {
    let mut taps = vec![DMatrix::zeros(1, 1); 9];
    // F(theta) = 0.4 cos(8 theta): +0.4 on every q pi / 4, -0.4 at pi / 8
    taps[8][(0, 0)] = 0.2;
    taps
}

/// Noiseless VRFT problem whose ideal controller is an iFIR.
pub struct VrftCase {
    pub ts: f64,
    pub plant: DiscreteSs,
    pub reference: ContinuousTf,
    pub mr_num: Vec<f64>,
    pub mr_den: Vec<f64>,
    pub ideal: IfirParams,
    pub u: Signal,
    pub y: Signal,
}

/// `P = 1/(J s + b)` and `M_r = 1/(tau s + 1)`, both ZOH-sampled, whose
/// model-matching controller is `H_0 + ts Gamma z/(z-1)`.
pub fn vrft_case(seed: u64, order: usize) -> VrftCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = 0.005;
    let j: f64 = rng.random_range(0.05..0.5);
    let b: f64 = rng.random_range(0.1..1.0);
    let tau: f64 = rng.random_range(0.03..0.2);
    let plant_tf = ContinuousTf::siso(vec![1.0], vec![j, b]).unwrap();
    let plant = plant_tf.discretize(ts, Discretization::Zoh).unwrap();
    let a = (-b / j * ts).exp();
    let b0 = (1.0 - a) / b;
    let p = (-ts / tau).exp();
    let scale = (1.0 - p) / b0;
    let mut taps = vec![0.0; order];
    taps[0] = a * scale;
    let ideal = IfirParams::siso(&taps, (1.0 - a) * scale / ts, ts).unwrap();
    let probe = ProbeConfig {
        num_tones: 20,
        freq_range_rad_s: [0.5, 200.0],
        duration_s: 30.0,
        sample_period_s: ts,
        seed,
        ..Default::default()
    };
    let u = multisine(&probe, 1).unwrap();
    let y = simulate_lti(&plant, &u, None).unwrap();
    VrftCase {
        ts,
        plant,
        reference: ContinuousTf::siso(vec![1.0], vec![tau, 1.0]).unwrap(),
        mr_num: vec![1.0 - p],
        mr_den: vec![1.0, -p],
        ideal,
        u,
        y,
    }
}

pub fn max_entry_error(a: &IfirParams, b: &IfirParams) -> f64 {
    let taps = a
        .taps
        .iter()
        .zip(&b.taps)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max);
    taps.max((&a.gamma - &b.gamma).amax())
}

/// Certified random iFIR: random taps with `H_0` raised until `F >= 0.1`.
pub fn random_passive_ifir(seed: u64, n: usize, m: usize, ts: f64) -> IfirParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taps: Vec<DMatrix<f64>> = (0..m)
        .map(|k| DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * 0.8f64.powi(k as i32)))
        .collect();
    let (lam, _) = popov_min_eig(&taps, 2001);
    let shift = (-lam).max(0.0) / 2.0 + 0.05;
    for i in 0..n {
        taps[0][(i, i)] += shift;
    }
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let gamma = &a * a.transpose() * rng.random_range(0.0..20.0);
    IfirParams::new(taps, gamma, ts).unwrap()
}

pub fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Small noisy synthesis problem with a grid fine enough for the guaranteed margin.
pub fn random_synthesis_problem(seed: u64) -> SynthesisProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=2);
    let m = rng.random_range(1..=8);
    let ts = 0.01;
    let len = 150;
    let e = Signal::from_fn(ts, len, n, |_, _| rng.random_range(-1.0..1.0)).unwrap();
    let taps: Vec<DMatrix<f64>> = (0..m)
        .map(|_| DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5)))
        .collect();
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let truth = IfirParams::new(taps, &g + g.transpose(), ts).unwrap();
    let mut u = eval_ifir(&truth, &e).unwrap();
    let noisy = u.samples().map(|v| v + 0.05 * rng.random_range(-1.0..1.0));
    u = Signal::new(ts, noisy).unwrap();
    let reg = build_regression(&e, &u, m).unwrap();
    let rho0 = rng.random_range(1.0..2.0);
    let rho: f64 = rng.random_range(0.3..0.85);
    let envelope = if rng.random_bool(0.5) { Envelope::Elementwise } else { Envelope::Spectral };
    let alpha = match envelope {
        Envelope::Elementwise => rho0 / n as f64,
        Envelope::Spectral => rho0,
    };
    // smallest grid whose guaranteed margin stays below 70% of the attainable one
    let per_interval = (m - 1) as f64 * std::f64::consts::PI * rho0 * (1.0 - rho.powi(m as i32)) / (1.0 - rho);
    let grid_min = ((per_interval / (1.4 * alpha)).ceil() as usize).max(4);
    let settings = SolverSettings {
        rho0,
        rho,
        grid_m: grid_min + rng.random_range(0..16),
        epsilon: EpsilonSetting::Auto,
        ridge: Some(1e-6),
        envelope,
        ..Default::default()
    };
    SynthesisProblem::from_regression(&reg, settings).unwrap()
}
