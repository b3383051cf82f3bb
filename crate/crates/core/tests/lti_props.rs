use std::f64::consts::PI;

use passive_ifir::lti::{
    approximate_inverse, first_order_ref, second_order_ref, simulate_lti, Discretization,
    FrequencyResponse,
};
use passive_ifir::plantsim::random_passive_plant;
use passive_ifir::signals::{dft_gain_phase, Signal};
use proptest::prelude::*;

fn step(ts: f64, n: usize) -> Signal {
    Signal::from_fn(ts, n, 1, |_, _| 1.0).unwrap()
}

proptest! {
    #[test]
    fn zoh_first_order_step_is_exact(tau in 0.005f64..1.0, ts in 1e-4f64..0.02) {
        let sys = first_order_ref(tau).unwrap().discretize(ts, Discretization::Zoh).unwrap();
        let y = simulate_lti(&sys, &step(ts, 400), None).unwrap();
        for k in 0..400 {
            // output at k reflects the input held over [0, k ts)
            let t = k as f64 * ts;
            prop_assert!((y.get(k, 0) - (1.0 - (-t / tau).exp())).abs() <= 1e-8);
        }
    }

    #[test]
    fn zoh_second_order_step_is_exact(wn in 2.0f64..60.0, zeta in 0.1f64..0.95, ts in 1e-4f64..0.01) {
        let sys = second_order_ref(wn, zeta).unwrap().discretize(ts, Discretization::Zoh).unwrap();
        let y = simulate_lti(&sys, &step(ts, 500), None).unwrap();
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        for k in 0..500 {
            let t = k as f64 * ts;
            let exact = 1.0
                - (-zeta * wn * t).exp() * ((wd * t).cos() + zeta / (1.0 - zeta * zeta).sqrt() * (wd * t).sin());
            prop_assert!((y.get(k, 0) - exact).abs() <= 1e-8, "k={} {} vs {}", k, y.get(k, 0), exact);
        }
    }

    #[test]
    fn first_order_inverse_is_accurate_to_bandwidth(tau in 0.005f64..2.0, scale in 10.0f64..100.0, frac in 0.0f64..=1.0) {
        let m = first_order_ref(tau).unwrap();
        let inv = approximate_inverse(&m, scale).unwrap();
        let p = scale / tau;
        let w = frac / tau;
        let g = m.freq_response(w).unwrap()[(0, 0)] * inv.freq_response(w).unwrap()[(0, 0)];
        let err = (g - 1.0).norm();
        prop_assert!(err <= w / p + 1e-12);
        if w / p <= 0.05 {
            prop_assert!(err <= 0.05);
        }
    }

    #[test]
    fn second_order_inverse_is_accurate_to_bandwidth(wn in 1.0f64..100.0, zeta in 0.3f64..1.0, scale in 10.0f64..100.0, frac in 0.0f64..=1.0) {
        let m = second_order_ref(wn, zeta).unwrap();
        let inv = approximate_inverse(&m, scale).unwrap();
        let p = scale * wn;
        // -3 dB bandwidth of the standard second-order model
        let z2 = 1.0 - 2.0 * zeta * zeta;
        let bw = wn * (z2 + (z2 * z2 + 1.0).sqrt()).sqrt();
        let w = frac * bw;
        let g = m.freq_response(w).unwrap()[(0, 0)] * inv.freq_response(w).unwrap()[(0, 0)];
        let err = (g - 1.0).norm();
        prop_assert!(err <= 2.0 * w / p + 1e-12, "w={} g={}", w, g);
        if 2.0 * w / p <= 0.05 {
            prop_assert!(err <= 0.05);
        }
    }

    #[test]
    fn discrete_response_matches_tone_dft(seed in 0u64..1000, order in 1usize..4, per in 20usize..400) {
        let sys = random_passive_plant(seed, order, 1).unwrap();
        let ts = 1e-3;
        let w = 2.0 * PI / (per as f64 * ts);
        // long enough that the discarded quarter holds the transient below 1e-10
        let settle = (1e-10f64).ln() / sys.spectral_radius().ln();
        let len = (4.0 * settle).max(40_000.0);
        prop_assume!(len < 1.5e6);
        let periods = (len as usize).div_ceil(per);
        let u = Signal::from_fn(ts, per * periods, 1, |k, _| (w * k as f64 * ts).cos()).unwrap();
        let y = simulate_lti(&sys, &u, None).unwrap();
        let est = dft_gain_phase(&u, &y, w).unwrap();
        let exact = sys.freq_response(w).unwrap()[(0, 0)];
        prop_assert!((est.complex() - exact).norm() <= 1e-6 * exact.norm(), "{} vs {}", est.complex(), exact);
    }
}
