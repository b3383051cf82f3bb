//! The iFIR controller: an FIR filter in parallel with a discrete integrator,
//! together with its Popov function and passivity checks.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{min_eig_herm, min_eig_sym};
use crate::serde_mat;
use crate::signals::Signal;

/// Default size of the a-posteriori verification grid on [0, pi].
pub const DENSE_GRID: usize = 10_001;

/// Acceptance threshold on the dense-grid minimum eigenvalue.
pub const PASSIVITY_TOL: f64 = 1e-8;

/// `u(t) = sum_k H_k e(t-k) + ts * Gamma * sum_{k>=0} e(t-k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfirParams {
    pub ts: f64,
    #[serde(with = "serde_mat")]
    pub gamma: DMatrix<f64>,
    #[serde(with = "serde_mat::vec")]
    pub taps: Vec<DMatrix<f64>>,
}

impl IfirParams {
    pub fn new(taps: Vec<DMatrix<f64>>, gamma: DMatrix<f64>, ts: f64) -> Result<Self> {
        let p = Self { ts, gamma, taps };
        p.validate()?;
        Ok(p)
    }

    /// All-zero controller with `m` taps.
    pub fn zeros(channels: usize, m: usize, ts: f64) -> Result<Self> {
        Self::new(
            vec![DMatrix::zeros(channels, channels); m],
            DMatrix::zeros(channels, channels),
            ts,
        )
    }

    /// SISO convenience constructor.
    pub fn siso(taps: &[f64], gamma: f64, ts: f64) -> Result<Self> {
        Self::new(
            taps.iter().map(|h| DMatrix::from_element(1, 1, *h)).collect(),
            DMatrix::from_element(1, 1, gamma),
            ts,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(invalid("iFIR needs at least one tap"));
        }
        if !(self.ts > 0.0) {
            return Err(invalid("iFIR sample period must be positive"));
        }
        let n = self.gamma.nrows();
        if n == 0 || self.gamma.ncols() != n {
            return Err(invalid("gamma must be square and non-empty"));
        }
        for h in &self.taps {
            if h.shape() != (n, n) {
                return Err(invalid("tap shapes must match gamma"));
            }
        }
        let finite = self
            .taps
            .iter()
            .chain(std::iter::once(&self.gamma))
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(invalid("non-finite iFIR parameter"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn order(&self) -> usize {
        self.taps.len()
    }

    /// Instantaneous gain from `e(t)` to `u(t)`.
    pub fn feedthrough(&self) -> DMatrix<f64> {
        &self.taps[0] + &self.gamma * self.ts
    }

    pub fn state(&self) -> IfirState<'_> {
        IfirState::new(self)
    }

    /// Transfer matrix `sum_k H_k z^-k + ts Gamma z / (z - 1)` at `z = exp(j w ts)`.
    pub fn freq_response(&self, omega_rad_s: f64) -> Result<DMatrix<Complex64>> {
        let theta = omega_rad_s * self.ts;
        let mut out = fir_response(&self.taps, theta);
        let has_integral = self.gamma.iter().any(|v| *v != 0.0);
        if has_integral {
            let z = Complex64::from_polar(1.0, theta);
            let den = z - 1.0;
            if den.norm() < 1e-14 {
                return Err(Error::AtPole(omega_rad_s));
            }
            let k = z / den * self.ts;
            out += self.gamma.map(|g| k * g);
        }
        Ok(out)
    }
}

fn fir_response(taps: &[DMatrix<f64>], theta: f64) -> DMatrix<Complex64> {
    let n = taps[0].nrows();
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for (k, h) in taps.iter().enumerate() {
        let w = Complex64::from_polar(1.0, -(k as f64) * theta);
        out += h.map(|v| w * v);
    }
    out
}

/// Running state of an iFIR controller: error history and integral sum.
#[derive(Debug, Clone)]
pub struct IfirState<'a> {
    params: &'a IfirParams,
    history: VecDeque<DVector<f64>>,
    accumulator: DVector<f64>,
}

impl<'a> IfirState<'a> {
    pub fn new(params: &'a IfirParams) -> Self {
        let n = params.channels();
        Self {
            params,
            history: VecDeque::with_capacity(params.order()),
            accumulator: DVector::zeros(n),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.accumulator.fill(0.0);
    }

    /// Consumes `e(t)` and returns `u(t)`.
    pub fn step(&mut self, e: &DVector<f64>) -> DVector<f64> {
        if self.history.len() == self.params.order() {
            self.history.pop_back();
        }
        self.history.push_front(e.clone());
        self.accumulator += e;
        let mut u = &self.params.gamma * &self.accumulator * self.params.ts;
        for (h, past) in self.params.taps.iter().zip(&self.history) {
            u.gemv(1.0, h, past, 1.0);
        }
        u
    }
}

/// Runs the controller over an error record starting from rest.
pub fn eval_ifir(params: &IfirParams, error_history: &Signal) -> Result<Signal> {
    let n = params.channels();
    if error_history.channels() != n {
        return Err(Error::DimensionMismatch {
            what: "controller channels",
            expected: n,
            actual: error_history.channels(),
        });
    }
    let mut state = params.state();
    let mut out = DMatrix::zeros(error_history.len(), n);
    for k in 0..error_history.len() {
        let u = state.step(&error_history.at(k));
        out.row_mut(k).copy_from(&u.transpose());
    }
    Ok(Signal::new(error_history.sample_period(), out)?.with_start_time(error_history.start_time()))
}

/// `F(theta) = sum_k (H_k e^{-jk theta} + H_k^T e^{jk theta})`, Hermitian.
pub fn popov_function(params: &IfirParams, theta: f64) -> DMatrix<Complex64> {
    popov_of_taps(&params.taps, theta)
}

pub fn popov_of_taps(taps: &[DMatrix<f64>], theta: f64) -> DMatrix<Complex64> {
    let g = fir_response(taps, theta);
    &g + g.adjoint()
}

/// `F` at `theta_q = q pi / (points - 1)`, `q = 0..points`, via FFT.
pub fn popov_on_grid(taps: &[DMatrix<f64>], points: usize) -> Vec<DMatrix<Complex64>> {
    assert!(points >= 2, "grid needs at least two points");
    let n = taps[0].nrows();
    let len = 2 * (points - 1);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    // g[a][b][q] = sum_k H_k[a,b] exp(-j k theta_q)
    let mut spectra = vec![vec![Vec::new(); n]; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for a in 0..n {
        for b in 0..n {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (k, h) in taps.iter().enumerate() {
                buf[k % len] += h[(a, b)];
            }
            fft.process(&mut buf);
            spectra[a][b] = buf[..points].to_vec();
        }
    }
    (0..points)
        .map(|q| {
            DMatrix::from_fn(n, n, |a, b| spectra[a][b][q] + spectra[b][a][q].conj())
        })
        .collect()
}

/// Minimum of `lambda_min(F(theta))` over the uniform grid, with its argmin.
pub fn popov_min_eig(taps: &[DMatrix<f64>], points: usize) -> (f64, f64) {
    let grid = popov_on_grid(taps, points);
    grid.iter()
        .enumerate()
        .map(|(q, f)| (min_eig_herm(f), q as f64 * PI / (points - 1) as f64))
        .fold((f64::INFINITY, 0.0), |best, cur| if cur.0 < best.0 { cur } else { best })
}

/// Evidence that a controller is passive: constraint settings used during
/// synthesis (when known) and the dense-grid verification result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityCertificate {
    /// Number of constraint grid intervals `M` used during synthesis.
    pub grid_size: Option<usize>,
    pub epsilon: Option<f64>,
    pub rho0: Option<f64>,
    pub rho: Option<f64>,
    pub dense_grid_points: usize,
    pub popov_min_eig: f64,
    pub argmin_theta: f64,
    pub gamma_min_eig: f64,
    pub gamma_asymmetry: f64,
    pub dense_check_min_eig: f64,
    pub verdict: bool,
}

impl PassivityCertificate {
    pub fn with_constraints(mut self, grid_size: usize, epsilon: f64, rho0: f64, rho: f64) -> Self {
        self.grid_size = Some(grid_size);
        self.epsilon = Some(epsilon);
        self.rho0 = Some(rho0);
        self.rho = Some(rho);
        self
    }
}

/// Dense-grid positive-realness check of the FIR part plus the integrator
/// condition on `Gamma`.
pub fn passivity_margin(params: &IfirParams, grid_points: usize) -> Result<PassivityCertificate> {
    if grid_points < 2 {
        return Err(invalid("passivity grid needs at least two points"));
    }
    let (popov, argmin) = popov_min_eig(&params.taps, grid_points);
    let g = &params.gamma;
    let gamma_min = min_eig_sym(&(g + g.transpose()));
    let scale = g.amax().max(1.0);
    let asym = (g - g.transpose()).amax();
    let min_eig = popov.min(gamma_min);
    Ok(PassivityCertificate {
        grid_size: None,
        epsilon: None,
        rho0: None,
        rho: None,
        dense_grid_points: grid_points,
        popov_min_eig: popov,
        argmin_theta: argmin,
        gamma_min_eig: gamma_min,
        gamma_asymmetry: asym,
        dense_check_min_eig: min_eig,
        verdict: min_eig >= -PASSIVITY_TOL && asym <= 1e-9 * scale,
    })
}

/// Smallest sampled-constraint margin that guarantees `F(theta) >= 0`:
/// `((m-1)/M) pi rho0 (1 - rho^m) / (1 - rho)`.
pub fn epsilon_bound(m: usize, grid_m: usize, rho0: f64, rho: f64) -> Result<f64> {
    if m < 1 {
        return Err(invalid("FIR order must be >= 1"));
    }
    if grid_m < 2 {
        return Err(invalid("constraint grid M must be >= 2"));
    }
    if !(rho0 >= 1.0) {
        return Err(invalid(format!("rho0 must be >= 1, got {rho0}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok((m - 1) as f64 / grid_m as f64 * PI * rho0 * (1.0 - rho.powi(m as i32)) / (1.0 - rho))
}
