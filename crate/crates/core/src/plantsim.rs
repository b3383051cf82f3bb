//! Synthetic passive plants: a flexible-load joint, coupled Cartesian
//! dynamics, and randomly drawn strictly passive discrete models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{min_eig_herm, poly, sym};
use crate::lti::{ContinuousSs, ContinuousTf, DiscreteSs, Discretization, FrequencyResponse};
use crate::serde_mat;

/// Plant sample period used by the random generator.
pub const DEFAULT_PLANT_TS: f64 = 1e-3;

/// A flexible mode seen from the motor: admittance `s / (J s^2 + c s + k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibleMode {
    pub stiffness: f64,
    pub damping: f64,
    pub inertia: f64,
}

impl FlexibleMode {
    /// Mode with natural frequency `omega` and damping ratio `zeta`.
    pub fn from_frequency(inertia: f64, omega: f64, zeta: f64) -> Self {
        Self {
            stiffness: inertia * omega * omega,
            damping: 2.0 * zeta * inertia * omega,
            inertia,
        }
    }

    pub fn natural_frequency(&self) -> f64 {
        (self.stiffness / self.inertia).sqrt()
    }
}

/// Torque to joint-velocity map: damped rigid body plus parallel modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibleJointParams {
    pub motor_inertia: f64,
    pub motor_damping: f64,
    #[serde(default)]
    pub modes: Vec<FlexibleMode>,
}

impl FlexibleJointParams {
    /// Rigid body J = 0.02, b = 0.1 with lightly damped modes near 8 and 25 rad/s.
    pub fn long_plate() -> Self {
        Self {
            motor_inertia: 0.02,
            motor_damping: 0.1,
            modes: vec![
                FlexibleMode::from_frequency(1.0, 8.0, 0.05),
                FlexibleMode::from_frequency(0.17, 25.0, 0.05),
            ],
        }
    }

    /// The long plate with every mode shifted up by a factor of 1.75.
    pub fn short_plate() -> Self {
        let mut p = Self::long_plate();
        for m in &mut p.modes {
            *m = FlexibleMode::from_frequency(
                m.inertia,
                1.75 * m.natural_frequency(),
                m.damping / (2.0 * (m.stiffness * m.inertia).sqrt()),
            );
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.motor_inertia) || !positive(self.motor_damping) {
            return Err(invalid("motor inertia and damping must be positive"));
        }
        for m in &self.modes {
            if !positive(m.stiffness) || !positive(m.damping) || !positive(m.inertia) {
                return Err(invalid("mode parameters must be positive"));
            }
        }
        Ok(())
    }
}

/// `1/(J s + b) + sum_i s/(J_i s^2 + c_i s + k_i)` as one rational function.
pub fn flexible_joint_plant(p: &FlexibleJointParams) -> Result<ContinuousTf> {
    p.validate()?;
    let mut num = vec![1.0];
    let mut den = vec![p.motor_inertia, p.motor_damping];
    for m in &p.modes {
        let mden = [m.inertia, m.damping, m.stiffness];
        let mnum = [1.0, 0.0];
        num = add(&poly::mul(&num, &mden), &poly::mul(&mnum, &den));
        den = poly::mul(&den, &mden);
    }
    ContinuousTf::siso(num, den)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, v) in a.iter().enumerate() {
        out[n - a.len() + i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[n - b.len() + i] += v;
    }
    out
}

/// Imaginary parts of the lightly damped plant poles, ascending.
pub fn resonances(plant: &ContinuousTf) -> Vec<f64> {
    let mut w: Vec<f64> = plant
        .entry(0, 0)
        .poles()
        .iter()
        .filter(|z| z.im > 1e-9)
        .map(|z| z.norm())
        .collect();
    w.sort_by(f64::total_cmp);
    w
}

/// Task-space force to velocity dynamics `v = (M s + D + K/s)^-1 F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledCartesianParams {
    #[serde(with = "serde_mat")]
    pub inertia: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub damping: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub stiffness: DMatrix<f64>,
}

impl CoupledCartesianParams {
    /// Coupled inertia and damping, no stiffness.
    pub fn cartesian3() -> Self {
        Self {
            inertia: DMatrix::from_row_slice(3, 3, &[3.0, 0.8, -0.5, 0.8, 2.5, 0.6, -0.5, 0.6, 2.0]),
            damping: DMatrix::from_row_slice(3, 3, &[12.0, 2.0, 1.0, 2.0, 9.0, -1.5, 1.0, -1.5, 10.0]),
            stiffness: DMatrix::zeros(3, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inertia.nrows();
        for (name, m) in [("inertia", &self.inertia), ("damping", &self.damping), ("stiffness", &self.stiffness)] {
            if m.shape() != (n, n) {
                return Err(invalid(format!("{name} must be {n}x{n}")));
            }
            let scale = m.amax().max(1.0);
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return Err(invalid(format!("{name} must be symmetric")));
            }
        }
        let eig = |m: &DMatrix<f64>| SymmetricEigen::new(m.clone()).eigenvalues.min();
        if eig(&self.inertia) <= 0.0 {
            return Err(Error::Singular("task-space inertia is not positive definite"));
        }
        if eig(&self.damping) <= 0.0 {
            return Err(invalid("damping must be positive definite"));
        }
        if eig(&self.stiffness) < -1e-12 {
            return Err(invalid("stiffness must be positive semidefinite"));
        }
        Ok(())
    }
}

/// State-space realization; the position states are dropped when `K = 0`.
pub fn coupled_cartesian_plant(p: &CoupledCartesianParams) -> Result<ContinuousSs> {
    p.validate()?;
    let n = p.inertia.nrows();
    let minv = p
        .inertia
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("task-space inertia"))?;
    let eye = DMatrix::<f64>::identity(n, n);
    if p.stiffness.iter().all(|v| *v == 0.0) {
        let a = -&minv * &p.damping;
        return ContinuousSs::new(a, minv, eye, DMatrix::zeros(n, n));
    }
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).copy_from(&eye);
    a.view_mut((n, 0), (n, n)).copy_from(&(-&minv * &p.stiffness));
    a.view_mut((n, n), (n, n)).copy_from(&(-&minv * &p.damping));
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((n, 0), (n, n)).copy_from(&minv);
    let mut c = DMatrix::zeros(n, 2 * n);
    c.view_mut((0, n), (n, n)).copy_from(&eye);
    ContinuousSs::new(a, b, c, DMatrix::zeros(n, n))
}

/// Randomly drawn strictly output-passive plant at [`DEFAULT_PLANT_TS`].
pub fn random_passive_plant(seed: u64, order: usize, channels: usize) -> Result<DiscreteSs> {
    random_passive_plant_with(seed, order, channels, DEFAULT_PLANT_TS)
}

/// Positive-real lag and mode sections with random input/output directions,
/// ZOH-sampled, plus an output-damping feedthrough that covers the sampling
/// shortage of passivity with margin.
pub fn random_passive_plant_with(seed: u64, order: usize, channels: usize, ts: f64) -> Result<DiscreteSs> {
    if order == 0 || channels == 0 {
        return Err(invalid("order and channels must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(order, order);
    let mut b = DMatrix::zeros(order, channels);
    let mut c = DMatrix::zeros(channels, order);
    let mut at = 0;
    while at < order {
        let mut dir: DVector<f64> = DVector::from_fn(channels, |_, _| rng.random_range(-1.0..1.0));
        if channels == 1 {
            dir[0] = 1.0;
        }
        let norm = dir.norm().max(1e-3);
        dir /= norm;
        let gain: f64 = rng.random_range(0.5..5.0f64).sqrt();
        if order - at >= 2 && rng.random_bool(0.5) {
            let inertia = rng.random_range(0.05..0.5);
            let omega: f64 = rng.random_range(3.0..60.0);
            let zeta = rng.random_range(0.03..0.5);
            // states: [position, velocity]
            a[(at, at + 1)] = 1.0;
            a[(at + 1, at)] = -omega * omega;
            a[(at + 1, at + 1)] = -2.0 * zeta * omega;
            for j in 0..channels {
                b[(at + 1, j)] = gain * dir[j] / inertia;
                c[(j, at + 1)] = gain * dir[j];
            }
            at += 2;
        } else {
            let tau = rng.random_range(0.01..0.5);
            a[(at, at)] = -1.0 / tau;
            for j in 0..channels {
                b[(at, j)] = gain * dir[j] / tau;
                c[(j, at)] = gain * dir[j];
            }
            at += 1;
        }
    }
    let cont = ContinuousSs::new(a, b, c, DMatrix::zeros(channels, channels))?;
    let mut disc = cont.discretize(ts, Discretization::Zoh)?;
    let shortage = is_positive_real(&disc, 2001)?.min_eig.min(0.0);
    let damping = rng.random_range(0.05..0.3);
    let extra = 0.5 * (-shortage) * 1.5 + damping;
    for j in 0..channels {
        disc.d[(j, j)] += extra;
    }
    Ok(disc)
}

/// Result of a grid positive-realness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveRealCheck {
    pub verdict: bool,
    pub min_eig: f64,
    pub argmin_omega: f64,
}

/// Default tolerance on the Hermitian-part eigenvalue.
pub const PR_TOL: f64 = 1e-9;

/// Models whose Hermitian part can be scanned over frequency.
pub trait PassivityScan: FrequencyResponse {
    fn check_stable(&self) -> Result<()>;
    /// Frequencies (rad/s) of a `points`-sized scan; `None` means s = infinity.
    fn scan_grid(&self, points: usize) -> Vec<Option<f64>>;
    fn response_at_infinity(&self) -> DMatrix<f64>;
}

impl PassivityScan for DiscreteSs {
    fn check_stable(&self) -> Result<()> {
        let r = self.spectral_radius();
        if r >= 1.0 - 1e-10 {
            return Err(Error::Unstable(r));
        }
        Ok(())
    }

    fn scan_grid(&self, points: usize) -> Vec<Option<f64>> {
        (0..points)
            .map(|q| Some(q as f64 * PI / ((points - 1) as f64 * self.ts)))
            .collect()
    }

    fn response_at_infinity(&self) -> DMatrix<f64> {
        self.d.clone()
    }
}

fn continuous_grid(scale: f64, points: usize) -> Vec<Option<f64>> {
    // bilinear warp of a uniform angle grid onto [0, inf]
    (0..points)
        .map(|q| {
            if q + 1 == points {
                None
            } else {
                let th = q as f64 * PI / (points - 1) as f64;
                Some(scale * (th / 2.0).tan())
            }
        })
        .collect()
}

fn pole_scale(ss: &ContinuousSs) -> f64 {
    if ss.order() == 0 {
        return 1.0;
    }
    let eig = ss.a.complex_eigenvalues();
    let logs: Vec<f64> = eig.iter().map(|z| z.norm()).filter(|m| *m > 0.0).map(f64::ln).collect();
    if logs.is_empty() {
        1.0
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }
}

impl PassivityScan for ContinuousSs {
    fn check_stable(&self) -> Result<()> {
        let s = self.spectral_abscissa();
        if s >= -1e-10 {
            return Err(Error::Unstable(s));
        }
        Ok(())
    }

    fn scan_grid(&self, points: usize) -> Vec<Option<f64>> {
        continuous_grid(pole_scale(self), points)
    }

    fn response_at_infinity(&self) -> DMatrix<f64> {
        self.d.clone()
    }
}

impl PassivityScan for ContinuousTf {
    fn check_stable(&self) -> Result<()> {
        self.to_ss().check_stable()
    }

    fn scan_grid(&self, points: usize) -> Vec<Option<f64>> {
        continuous_grid(pole_scale(&self.to_ss()), points)
    }

    fn response_at_infinity(&self) -> DMatrix<f64> {
        self.to_ss().d
    }
}

/// Minimum over a frequency grid of `lambda_min(G + G^H)`.
pub fn is_positive_real<M: PassivityScan>(model: &M, grid_points: usize) -> Result<PositiveRealCheck> {
    if grid_points < 2 {
        return Err(invalid("grid needs at least two points"));
    }
    model.check_stable()?;
    let mut best = (f64::INFINITY, 0.0);
    for w in model.scan_grid(grid_points) {
        let (eig, at) = match w {
            Some(w) => {
                let g = model.freq_response(w)?;
                (min_eig_herm(&(&g + g.adjoint())), w)
            }
            None => {
                let d = model.response_at_infinity();
                (crate::linalg::min_eig_sym(&(sym(&d) * 2.0)), f64::INFINITY)
            }
        };
        if eig < best.0 {
            best = (eig, at);
        }
    }
    Ok(PositiveRealCheck {
        verdict: best.0 >= -PR_TOL,
        min_eig: best.0,
        argmin_omega: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::simulate_lti;
    use crate::signals::Signal;

    #[test]
    fn rigid_body_is_first_order_lag() {
        let p = FlexibleJointParams {
            motor_inertia: 0.5,
            motor_damping: 2.0,
            modes: vec![],
        };
        let tf = flexible_joint_plant(&p).unwrap();
        assert_eq!(tf.entry(0, 0).num, vec![1.0]);
        assert_eq!(tf.entry(0, 0).den, vec![0.5, 2.0]);
        assert!(is_positive_real(&tf, 1001).unwrap().verdict);
    }

    #[test]
    fn presets_have_ordered_resonances() {
        let long = flexible_joint_plant(&FlexibleJointParams::long_plate()).unwrap();
        let short = flexible_joint_plant(&FlexibleJointParams::short_plate()).unwrap();
        assert_eq!(long.entry(0, 0).den.len() - 1, 5);
        let rl = resonances(&long);
        let rs = resonances(&short);
        assert_eq!(rl.len(), 2);
        assert!(rs[0] / rl[0] > 1.5, "{rl:?} {rs:?}");
        for tf in [&long, &short] {
            assert!(is_positive_real(tf, 10_001).unwrap().verdict);
        }
    }

    #[test]
    fn invalid_joint_parameters() {
        let mut p = FlexibleJointParams::long_plate();
        p.modes[0].damping = 0.0;
        assert!(flexible_joint_plant(&p).is_err());
    }

    #[test]
    fn cartesian_decoupled_case() {
        let p = CoupledCartesianParams {
            inertia: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0])),
            damping: DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 3.0, 3.0])),
            stiffness: DMatrix::zeros(3, 3),
        };
        let ss = coupled_cartesian_plant(&p).unwrap();
        let g = ss.freq_response(2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j {
                    1.0 / num_complex::Complex64::new(3.0, 2.0 * p.inertia[(i, i)])
                } else {
                    num_complex::Complex64::new(0.0, 0.0)
                };
                assert!((g[(i, j)] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cartesian_coupling_and_passivity() {
        let p = CoupledCartesianParams::cartesian3();
        let ss = coupled_cartesian_plant(&p).unwrap();
        assert!(is_positive_real(&ss, 10_001).unwrap().verdict);
        let d = ss.discretize(1e-3, Discretization::Zoh).unwrap();
        let f = Signal::from_fn(1e-3, 2000, 3, |_, c| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        let v = simulate_lti(&d, &f, None).unwrap();
        let vx = v.channel(0).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let vy = v.channel(1).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(vy > 0.01 * vx, "vx={vx} vy={vy}");

        let stiff = CoupledCartesianParams {
            stiffness: DMatrix::from_diagonal_element(3, 3, 20.0),
            ..p.clone()
        };
        let s2 = coupled_cartesian_plant(&stiff).unwrap();
        assert_eq!(s2.order(), 6);
        assert!(is_positive_real(&s2, 2001).unwrap().verdict);

        let bad = CoupledCartesianParams {
            inertia: DMatrix::zeros(3, 3),
            ..p
        };
        assert!(coupled_cartesian_plant(&bad).is_err());
    }

    #[test]
    fn random_plants_are_passive_and_varied() {
        let a = random_passive_plant(1, 4, 2).unwrap();
        let b = random_passive_plant(2, 4, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, random_passive_plant(1, 4, 2).unwrap());
        for seed in 0..5 {
            let p = random_passive_plant(seed, 5, 2).unwrap();
            let chk = is_positive_real(&p, 10_001).unwrap();
            assert!(chk.verdict && chk.min_eig > 0.0, "seed {seed}: {chk:?}");
        }
        let first = random_passive_plant(3, 1, 1).unwrap();
        assert_eq!(first.order(), 1);
        assert!(first.a[(0, 0)].abs() < 1.0);
    }

    #[test]
    fn positive_real_examples() {
        let g = DiscreteSs::gain(DMatrix::from_element(1, 1, 1.5), 0.01).unwrap();
        let c = is_positive_real(&g, 11).unwrap();
        assert!((c.min_eig - 3.0).abs() < 1e-12 && c.verdict);
        // 1 - z^-1
        let diff = DiscreteSs::from_coeffs(vec![1.0, -1.0], vec![1.0, 0.0], 0.01).unwrap();
        let c = is_positive_real(&diff, 10_001).unwrap();
        assert!(c.verdict);
        assert!(c.min_eig.abs() < 1e-12 && c.argmin_omega == 0.0);
        let unstable = DiscreteSs::from_coeffs(vec![1.0], vec![1.0, -1.0], 0.01).unwrap();
        assert!(matches!(is_positive_real(&unstable, 11), Err(Error::Unstable(_))));
        let integ = ContinuousTf::siso(vec![1.0], vec![1.0, 0.0]).unwrap();
        assert!(is_positive_real(&integ, 11).is_err());
    }
}
