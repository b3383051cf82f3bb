//! Continuous transfer functions, state-space models, discretization,
//! simulation and approximate inversion of reference models.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::poly;
use crate::serde_mat;
use crate::signals::Signal;

/// Single-input single-output rational function, descending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SisoTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl SisoTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let num = poly::trim(&num);
        let den = poly::trim(&den);
        if poly::is_zero(&den) {
            return Err(invalid("denominator is identically zero"));
        }
        if num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(invalid("non-finite transfer function coefficient"));
        }
        if !poly::is_zero(&num) && num.len() > den.len() {
            return Err(invalid("transfer function is improper"));
        }
        Ok(Self { num, den })
    }

    pub fn zero() -> Self {
        Self {
            num: vec![0.0],
            den: vec![1.0],
        }
    }

    pub fn is_zero(&self) -> bool {
        poly::is_zero(&self.num)
    }

    pub fn order(&self) -> usize {
        if self.is_zero() {
            0
        } else {
            self.den.len() - 1
        }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        poly::eval(&self.num, s) / poly::eval(&self.den, s)
    }

    pub fn dc_gain(&self) -> f64 {
        poly::eval_real(&self.num, 0.0) / poly::eval_real(&self.den, 0.0)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        poly::roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        if self.is_zero() {
            vec![]
        } else {
            poly::roots(&self.num)
        }
    }

    /// Controllable canonical realization `(A, B, C, D)` with `B = e_1`.
    fn realize(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let n = self.order();
        let lead = self.den[0];
        let den: Vec<f64> = self.den.iter().map(|c| c / lead).collect();
        let mut num = vec![0.0; den.len() - self.num.len()];
        num.extend(self.num.iter().map(|c| c / lead));
        let d = num[0];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        if n > 0 {
            b[0] = 1.0;
            for j in 0..n {
                a[(0, j)] = -den[j + 1];
                c[j] = num[j + 1] - d * den[j + 1];
            }
            for i in 1..n {
                a[(i, i - 1)] = 1.0;
            }
        }
        (a, b, c, d)
    }
}

/// Continuous-time transfer matrix stored as row-major SISO entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTf {
    outputs: usize,
    inputs: usize,
    entries: Vec<SisoTf>,
}

impl ContinuousTf {
    pub fn new(outputs: usize, inputs: usize, entries: Vec<SisoTf>) -> Result<Self> {
        if outputs == 0 || inputs == 0 || entries.len() != outputs * inputs {
            return Err(invalid("transfer matrix shape does not match entry count"));
        }
        let entries = entries
            .into_iter()
            .map(|e| SisoTf::new(e.num, e.den))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            outputs,
            inputs,
            entries,
        })
    }

    pub fn siso(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        Self::new(1, 1, vec![SisoTf::new(num, den)?])
    }

    /// `entry * I_n`.
    pub fn diagonal(entry: &ContinuousTf, n: usize) -> Result<Self> {
        if entry.dims() != (1, 1) {
            return Err(invalid("diagonal() expects a SISO entry"));
        }
        let mut entries = vec![SisoTf::zero(); n * n];
        for i in 0..n {
            entries[i * n + i] = entry.entries[0].clone();
        }
        Self::new(n, n, entries)
    }

    pub fn static_gain(g: f64) -> Self {
        Self::siso(vec![g], vec![1.0]).expect("static gain is proper")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.outputs, self.inputs)
    }

    pub fn entry(&self, i: usize, j: usize) -> &SisoTf {
        &self.entries[i * self.inputs + j]
    }

    pub fn is_diagonal(&self) -> bool {
        self.outputs == self.inputs
            && (0..self.outputs)
                .all(|i| (0..self.inputs).all(|j| i == j || self.entry(i, j).is_zero()))
    }

    pub fn dc_gain(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.outputs, self.inputs, |i, j| self.entry(i, j).dc_gain())
    }

    /// Block-diagonal realization of the entries.
    pub fn to_ss(&self) -> ContinuousSs {
        let n: usize = self.entries.iter().map(SisoTf::order).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, self.inputs);
        let mut c = DMatrix::zeros(self.outputs, n);
        let mut d = DMatrix::zeros(self.outputs, self.inputs);
        let mut at = 0;
        for i in 0..self.outputs {
            for j in 0..self.inputs {
                let e = self.entry(i, j);
                if e.is_zero() {
                    continue;
                }
                let (ea, eb, ec, ed) = e.realize();
                let k = ea.nrows();
                a.view_mut((at, at), (k, k)).copy_from(&ea);
                b.view_mut((at, j), (k, 1)).copy_from(&eb);
                c.view_mut((i, at), (1, k)).copy_from(&ec.transpose());
                d[(i, j)] = ed;
                at += k;
            }
        }
        ContinuousSs { a, b, c, d }
    }

    pub fn discretize(&self, ts: f64, method: Discretization) -> Result<DiscreteSs> {
        discretize(&self.to_ss(), ts, method)
    }
}

/// `1 / (tau s + 1)`.
pub fn first_order_ref(tau_s: f64) -> Result<ContinuousTf> {
    if !(tau_s > 0.0) {
        return Err(invalid(format!("time constant must be positive, got {tau_s}")));
    }
    ContinuousTf::siso(vec![1.0], vec![tau_s, 1.0])
}

/// `wn^2 / (s^2 + 2 zeta wn s + wn^2)`.
pub fn second_order_ref(omega_n: f64, zeta: f64) -> Result<ContinuousTf> {
    if !(omega_n > 0.0 && zeta > 0.0) {
        return Err(invalid("natural frequency and damping must be positive"));
    }
    let w2 = omega_n * omega_n;
    ContinuousTf::siso(vec![w2], vec![1.0, 2.0 * zeta * omega_n, w2])
}

/// Proper inverse of a diagonal minimum-phase model: each entry `den/num` is
/// completed with repeated poles at `-pole_scale * (fastest pole magnitude)`,
/// written as `(s/p + 1)` factors so the DC gain stays exactly inverted.
pub fn approximate_inverse(model: &ContinuousTf, pole_scale: f64) -> Result<ContinuousTf> {
    if !(pole_scale > 1.0) {
        return Err(invalid(format!("pole_scale must exceed 1, got {pole_scale}")));
    }
    if !model.is_diagonal() {
        return Err(invalid("approximate inverse supports diagonal models only"));
    }
    let n = model.outputs;
    let mut entries = vec![SisoTf::zero(); n * n];
    for i in 0..n {
        let e = model.entry(i, i);
        if e.is_zero() {
            return Err(Error::NonMinimumPhase("identically zero diagonal entry".into()));
        }
        if let Some(z) = e.zeros().into_iter().find(|z| z.re >= -1e-12) {
            return Err(Error::NonMinimumPhase(format!("{z}")));
        }
        let rel_deg = e.den.len() - e.num.len();
        let fastest = e.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        let mut den = e.num.clone();
        if rel_deg > 0 {
            let p = pole_scale * if fastest > 0.0 { fastest } else { 1.0 };
            for _ in 0..rel_deg {
                den = poly::mul(&den, &[1.0 / p, 1.0]);
            }
        }
        entries[i * n + i] = SisoTf::new(e.den.clone(), den)?;
    }
    ContinuousTf::new(n, n, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    Zoh,
    #[default]
    Tustin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSs {
    #[serde(with = "serde_mat")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub d: DMatrix<f64>,
}

impl ContinuousSs {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d.nrows(), self.d.ncols())
    }

    /// Largest real part of the eigenvalues of A.
    pub fn spectral_abscissa(&self) -> f64 {
        if self.order() == 0 {
            return f64::NEG_INFINITY;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn discretize(&self, ts: f64, method: Discretization) -> Result<DiscreteSs> {
        discretize(self, ts, method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSs {
    #[serde(with = "serde_mat")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub d: DMatrix<f64>,
    pub ts: f64,
}

impl DiscreteSs {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        if !(ts > 0.0) {
            return Err(invalid("sample period must be positive"));
        }
        Ok(Self { a, b, c, d, ts })
    }

    /// SISO model from coefficients in descending powers of z (proper).
    pub fn from_coeffs(num: Vec<f64>, den: Vec<f64>, ts: f64) -> Result<Self> {
        let tf = ContinuousTf::siso(num, den)?;
        let ss = tf.to_ss();
        Self::new(ss.a, ss.b, ss.c, ss.d, ts)
    }

    /// Static feedthrough `d` (no states).
    pub fn gain(d: DMatrix<f64>, ts: f64) -> Result<Self> {
        let (q, p) = d.shape();
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, p), DMatrix::zeros(q, 0), d, ts)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `(outputs, inputs)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.d.nrows(), self.d.ncols())
    }

    pub fn spectral_radius(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Sum of two models with the same shape and rate.
    pub fn parallel(&self, other: &DiscreteSs) -> Result<DiscreteSs> {
        if self.dims() != other.dims() {
            return Err(invalid("parallel connection needs equal dimensions"));
        }
        let (n1, n2) = (self.order(), other.order());
        let n = n1 + n2;
        let (q, p) = self.dims();
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n, p);
        b.view_mut((0, 0), (n1, p)).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, p)).copy_from(&other.b);
        let mut c = DMatrix::zeros(q, n);
        c.view_mut((0, 0), (q, n1)).copy_from(&self.c);
        c.view_mut((0, n1), (q, n2)).copy_from(&other.c);
        DiscreteSs::new(a, b, c, &self.d + &other.d, self.ts)
    }
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let bad = a.ncols() != n
        || b.nrows() != n
        || c.ncols() != n
        || d.nrows() != c.nrows()
        || d.ncols() != b.ncols();
    if bad {
        return Err(invalid(format!(
            "inconsistent state-space dimensions A{:?} B{:?} C{:?} D{:?}",
            a.shape(),
            b.shape(),
            c.shape(),
            d.shape()
        )));
    }
    if [a, b, c, d].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(invalid("non-finite state-space entry"));
    }
    Ok(())
}

/// ZOH (exact for piecewise-constant inputs) or Tustin discretization.
pub fn discretize(model: &ContinuousSs, ts: f64, method: Discretization) -> Result<DiscreteSs> {
    if !(ts > 0.0) {
        return Err(invalid("sample period must be positive"));
    }
    let n = model.order();
    let p = model.b.ncols();
    match method {
        Discretization::Zoh => {
            let mut aug = DMatrix::zeros(n + p, n + p);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&model.a * ts));
            aug.view_mut((0, n), (n, p)).copy_from(&(&model.b * ts));
            let e = aug.exp();
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow);
            }
            let a = e.view((0, 0), (n, n)).into_owned();
            let b = e.view((0, n), (n, p)).into_owned();
            DiscreteSs::new(a, b, model.c.clone(), model.d.clone(), ts)
        }
        Discretization::Tustin => {
            let half = &model.a * (0.5 * ts);
            let eye = DMatrix::<f64>::identity(n, n);
            let m = (&eye - &half)
                .try_inverse()
                .ok_or(Error::Singular("I - A ts/2 in Tustin discretization"))?;
            let a = &m * (&eye + &half);
            let mb = &m * &model.b * ts;
            let c = &model.c * &m;
            let d = &model.d + &model.c * &mb * 0.5;
            DiscreteSs::new(a, mb, c, d, ts)
        }
    }
}

/// State-space recursion `x+ = Ax + Bu, y = Cx + Du`.
pub fn simulate_lti(model: &DiscreteSs, input: &Signal, x0: Option<&DVector<f64>>) -> Result<Signal> {
    let (q, p) = model.dims();
    if input.channels() != p {
        return Err(Error::DimensionMismatch {
            what: "model inputs",
            expected: p,
            actual: input.channels(),
        });
    }
    if (input.sample_period() - model.ts).abs() > 1e-12 * model.ts {
        return Err(Error::RateMismatch(model.ts, input.sample_period()));
    }
    let n = model.order();
    let mut x = match x0 {
        Some(x0) if x0.len() != n => {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: n,
                actual: x0.len(),
            })
        }
        Some(x0) => x0.clone(),
        None => DVector::zeros(n),
    };
    let u_all = input.samples();
    let mut out = DMatrix::zeros(input.len(), q);
    let mut u = DVector::zeros(p);
    for k in 0..input.len() {
        for j in 0..p {
            u[j] = u_all[(k, j)];
        }
        let y = &model.c * &x + &model.d * &u;
        out.row_mut(k).copy_from(&y.transpose());
        x = &model.a * &x + &model.b * &u;
    }
    Ok(Signal::new(input.sample_period(), out)?.with_start_time(input.start_time()))
}

/// Frequency response as a complex `(outputs x inputs)` matrix.
pub trait FrequencyResponse {
    fn freq_response(&self, omega_rad_s: f64) -> Result<DMatrix<Complex64>>;
}

impl FrequencyResponse for ContinuousTf {
    fn freq_response(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let s = Complex64::new(0.0, omega);
        let mut out = DMatrix::zeros(self.outputs, self.inputs);
        for i in 0..self.outputs {
            for j in 0..self.inputs {
                let e = self.entry(i, j);
                if e.is_zero() {
                    continue;
                }
                let den = poly::eval(&e.den, s);
                if den.norm() <= 1e-14 * poly::eval(&e.den, Complex64::new(0.0, omega.abs() + 1.0)).norm()
                {
                    return Err(Error::AtPole(omega));
                }
                out[(i, j)] = poly::eval(&e.num, s) / den;
            }
        }
        Ok(out)
    }
}

fn ss_response(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    z: Complex64,
    omega: f64,
) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    let d = d.map(|v| Complex64::new(v, 0.0));
    if n == 0 {
        return Ok(d);
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
        diag - a[(i, j)]
    });
    let bc = b.map(|v| Complex64::new(v, 0.0));
    let lu = m.lu();
    let x = lu.solve(&bc).ok_or(Error::AtPole(omega))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::AtPole(omega));
    }
    Ok(c.map(|v| Complex64::new(v, 0.0)) * x + d)
}

impl FrequencyResponse for ContinuousSs {
    fn freq_response(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        ss_response(&self.a, &self.b, &self.c, &self.d, Complex64::new(0.0, omega), omega)
    }
}

impl FrequencyResponse for DiscreteSs {
    /// Evaluated at `z = exp(j omega ts)`.
    fn freq_response(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let z = Complex64::from_polar(1.0, omega * self.ts);
        ss_response(&self.a, &self.b, &self.c, &self.d, z, omega)
    }
}

/// Step-response characteristics of a SISO model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub rise_time_s: f64,
    pub settling_time_s: f64,
    pub overshoot_pct: f64,
    pub peak: f64,
}

/// 10-90% rise time, 2% settling time and overshoot from a fine ZOH simulation.
pub fn step_info(model: &ContinuousTf, horizon_s: f64, dt: f64) -> Result<StepInfo> {
    if model.dims() != (1, 1) {
        return Err(invalid("step_info expects a SISO model"));
    }
    let sys = model.discretize(dt, Discretization::Zoh)?;
    let n = (horizon_s / dt).ceil() as usize + 1;
    let step = Signal::from_fn(dt, n, 1, |_, _| 1.0)?;
    let y = simulate_lti(&sys, &step, None)?.channel(0);
    let fin = model.dc_gain()[(0, 0)];
    let cross = |level: f64| -> f64 {
        for k in 1..y.len() {
            if (y[k] - level) * fin >= 0.0 {
                let frac = (level - y[k - 1]) / (y[k] - y[k - 1]);
                return (k as f64 - 1.0 + frac) * dt;
            }
        }
        f64::NAN
    };
    let rise = cross(0.9 * fin) - cross(0.1 * fin);
    let band = 0.02 * fin.abs();
    let settle = match (0..y.len()).rev().find(|&k| (y[k] - fin).abs() > band) {
        Some(k) if k + 1 < y.len() => {
            // interpolate the last exit from the band
            let edge = if y[k] > fin { fin + band } else { fin - band };
            let frac = (edge - y[k]) / (y[k + 1] - y[k]);
            (k as f64 + frac) * dt
        }
        Some(_) => f64::NAN,
        None => 0.0,
    };
    let peak = y.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    Ok(StepInfo {
        rise_time_s: rise,
        settling_time_s: settle,
        overshoot_pct: 100.0 * ((peak - fin) / fin).max(0.0),
        peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_order_reference_timing() {
        let m = first_order_ref(0.05).unwrap();
        let info = step_info(&m, 1.0, 1e-5).unwrap();
        assert!((info.rise_time_s - 0.1099).abs() < 1e-3, "{info:?}");
        assert!((info.settling_time_s - 0.1956).abs() < 2e-3, "{info:?}");
        assert_eq!(m.dc_gain()[(0, 0)], 1.0);
        let g = m.freq_response(20.0).unwrap()[(0, 0)].norm();
        assert!((g - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(first_order_ref(0.0).is_err());
    }

    #[test]
    fn second_order_reference_timing() {
        let m = second_order_ref(25.0, 0.7).unwrap();
        let info = step_info(&m, 2.0, 1e-5).unwrap();
        assert!((info.overshoot_pct - 4.60).abs() < 0.05, "{info:?}");
        assert!((info.rise_time_s - 0.085).abs() < 2e-3, "{info:?}");
        assert!((info.settling_time_s - 0.239).abs() < 5e-3, "{info:?}");
        let g = m.freq_response(25.0).unwrap()[(0, 0)].norm();
        assert!((g - 1.0 / 1.4).abs() < 1e-9);

        let aggressive = second_order_ref(10.0, 0.3).unwrap();
        assert_eq!(aggressive.entry(0, 0).den, vec![1.0, 6.0, 100.0]);
        let info = step_info(&aggressive, 3.0, 1e-5).unwrap();
        let zeta: f64 = 0.3;
        let analytic = 1.0 + (-zeta * std::f64::consts::PI / (1.0 - zeta * zeta).sqrt()).exp();
        assert!((info.peak - analytic).abs() < 1e-6, "{} vs {analytic}", info.peak);
        assert!((analytic - 1.372).abs() < 1e-3);
        assert_relative_eq!(aggressive.dc_gain()[(0, 0)], 1.0);
    }

    #[test]
    fn zoh_first_order_pole() {
        let sys = first_order_ref(0.05).unwrap().discretize(0.005, Discretization::Zoh).unwrap();
        assert!((sys.a[(0, 0)] - (-0.1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zoh_integrator_accumulates() {
        let integ = ContinuousTf::siso(vec![1.0], vec![1.0, 0.0]).unwrap();
        let sys = integ.discretize(0.1, Discretization::Zoh).unwrap();
        assert_relative_eq!(sys.a[(0, 0)], 1.0);
        let step = Signal::from_fn(0.1, 5, 1, |_, _| 1.0).unwrap();
        let y = simulate_lti(&sys, &step, None).unwrap().channel(0);
        for (k, v) in y.iter().enumerate() {
            assert!((v - 0.1 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn tustin_preserves_dc_gain() {
        let m = ContinuousTf::siso(vec![3.0, 2.0], vec![1.0, 4.0, 5.0]).unwrap();
        let d = m.discretize(0.01, Discretization::Tustin).unwrap();
        let g = d.freq_response(0.0).unwrap()[(0, 0)];
        assert!((g.re - 0.4).abs() < 1e-12 && g.im.abs() < 1e-12);
        // frequency warping: H_d(w) = H_c(2/T tan(wT/2))
        let w: f64 = 30.0;
        let wc = 2.0 / 0.01 * (w * 0.01 / 2.0).tan();
        let hd = d.freq_response(w).unwrap()[(0, 0)];
        let hc = m.freq_response(wc).unwrap()[(0, 0)];
        assert!((hd - hc).norm() < 1e-10);
    }

    #[test]
    fn discrete_step_matches_analytic() {
        for ts in [1e-3, 5e-3] {
            let sys = first_order_ref(0.05).unwrap().discretize(ts, Discretization::Zoh).unwrap();
            let step = Signal::from_fn(ts, 400, 1, |_, _| 1.0).unwrap();
            let y = simulate_lti(&sys, &step, None).unwrap();
            for k in 0..y.len() {
                let t = k as f64 * ts;
                assert!((y.get(k, 0) - (1.0 - (-t / 0.05).exp())).abs() < 1e-9);
            }
        }
        // underdamped second order, analytic step response
        let (wn, z): (f64, f64) = (25.0, 0.7);
        let sys = second_order_ref(wn, z).unwrap().discretize(1e-3, Discretization::Zoh).unwrap();
        let step = Signal::from_fn(1e-3, 600, 1, |_, _| 1.0).unwrap();
        let y = simulate_lti(&sys, &step, None).unwrap();
        let wd = wn * (1.0 - z * z).sqrt();
        let phi = (z).acos();
        for k in 0..y.len() {
            let t = k as f64 * 1e-3;
            let exact = 1.0 - (-z * wn * t).exp() * (wd * t + phi).sin() / (1.0 - z * z).sqrt();
            assert!((y.get(k, 0) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn feedthrough_and_zero_input() {
        let sys = DiscreteSs::gain(DMatrix::identity(2, 2), 0.01).unwrap();
        let u = Signal::from_fn(0.01, 7, 2, |k, c| (k * 3 + c) as f64).unwrap();
        let y = simulate_lti(&sys, &u, None).unwrap();
        assert_eq!(y.samples(), u.samples());
        let lag = first_order_ref(0.05).unwrap().discretize(0.01, Discretization::Zoh).unwrap();
        let z = Signal::zeros(0.01, 10, 1).unwrap();
        assert_eq!(simulate_lti(&lag, &z, None).unwrap().max_abs(), 0.0);
        assert!(simulate_lti(&lag, &u, None).is_err());
    }

    #[test]
    fn inverse_of_first_order() {
        let m = first_order_ref(0.05).unwrap();
        let inv = approximate_inverse(&m, 10.0).unwrap();
        let e = inv.entry(0, 0);
        assert_relative_eq!(e.num[0], 0.05, epsilon = 1e-15);
        assert_relative_eq!(e.den[0], 0.005, epsilon = 1e-15);
        assert_relative_eq!(e.den[1], 1.0);
        for k in 0..=200 {
            let w = 20.0 * k as f64 / 200.0;
            let g = m.freq_response(w).unwrap()[(0, 0)] * inv.freq_response(w).unwrap()[(0, 0)];
            assert!(g.norm() >= 0.995);
            assert!((g - 1.0).norm() <= w / 200.0 + 1e-12);
            if w <= 10.0 {
                assert!((g - 1.0).norm() <= 0.05);
            }
        }
    }

    #[test]
    fn inverse_of_second_order_and_static() {
        let m = second_order_ref(25.0, 0.7).unwrap();
        let inv = approximate_inverse(&m, 10.0).unwrap();
        let poles = inv.entry(0, 0).poles();
        assert_eq!(poles.len(), 2);
        for p in poles {
            assert!((p.re + 250.0).abs() < 1e-6 && p.im.abs() < 1e-6);
        }
        let dc = m.dc_gain()[(0, 0)] * inv.dc_gain()[(0, 0)];
        assert!((dc - 1.0).abs() < 1e-9);
        for k in 1..=100 {
            let w = 25.0 * k as f64 / 100.0;
            let g = m.freq_response(w).unwrap()[(0, 0)] * inv.freq_response(w).unwrap()[(0, 0)];
            assert!((g - 1.0).norm() <= 2.0 * w / 250.0 + 1e-12, "w={w} g={g}");
            if w <= 6.0 {
                assert!((g - 1.0).norm() <= 0.05, "w={w} g={g}");
            }
        }
        let st = approximate_inverse(&ContinuousTf::static_gain(4.0), 10.0).unwrap();
        assert_relative_eq!(st.dc_gain()[(0, 0)], 0.25);
    }

    #[test]
    fn inverse_rejects_nonminimum_phase() {
        let m = ContinuousTf::siso(vec![-1.0, 1.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert!(matches!(approximate_inverse(&m, 10.0), Err(Error::NonMinimumPhase(_))));
    }

    #[test]
    fn freq_response_values_and_poles() {
        let m = first_order_ref(0.05).unwrap();
        assert_relative_eq!(m.freq_response(0.0).unwrap()[(0, 0)].re, 1.0);
        let integ = ContinuousTf::siso(vec![1.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(integ.freq_response(0.0), Err(Error::AtPole(_))));
        let dint = integ.discretize(0.1, Discretization::Zoh).unwrap();
        assert!(matches!(dint.freq_response(0.0), Err(Error::AtPole(_))));
    }

    #[test]
    fn mimo_realization_matches_entries() {
        let entries = vec![
            SisoTf::new(vec![1.0], vec![1.0, 2.0]).unwrap(),
            SisoTf::new(vec![0.5, 1.0], vec![1.0, 3.0, 2.0]).unwrap(),
            SisoTf::zero(),
            SisoTf::new(vec![2.0], vec![1.0]).unwrap(),
        ];
        let tf = ContinuousTf::new(2, 2, entries).unwrap();
        let ss = tf.to_ss();
        assert_eq!(ss.order(), 3);
        for w in [0.0, 0.7, 5.0] {
            let a = tf.freq_response(w).unwrap();
            let b = ss.freq_response(w).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn json_shape() {
        let m = first_order_ref(0.05).unwrap();
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["entries"][0]["num"], serde_json::json!([1.0]));
        assert_eq!(v["entries"][0]["den"], serde_json::json!([0.05, 1.0]));
        let d = m.discretize(0.01, Discretization::Zoh).unwrap();
        let back: DiscreteSs = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(serde_json::to_value(&d).unwrap()["ts"], 0.01);
    }
}
