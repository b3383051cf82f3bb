//! Passive iFIR synthesis: the VRFT least-squares cost under the Gamma PSD,
//! tap-envelope and sampled Popov constraints, solved by ADMM with a final
//! feasibility step, plus KKT diagnostics and an independent dual
//! projected-gradient oracle.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::ifir::{epsilon_bound, passivity_margin, popov_on_grid, IfirParams, PassivityCertificate, DENSE_GRID};
use crate::linalg::{min_eig_herm, min_eig_sym, spectral_norm, sym};
use crate::vrft::{Column, LsObjective, RegressionData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    #[default]
    Elementwise,
    Spectral,
}

/// Sampled-constraint margin: the guaranteed bound or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EpsilonSetting {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for EpsilonSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for EpsilonSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Self::Value(v)),
            Raw::Text(t) if t == "auto" => Ok(Self::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "epsilon must be \"auto\" or a number, got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub rho0: f64,
    pub rho: f64,
    /// Number of constraint grid intervals `M`.
    pub grid_m: usize,
    pub epsilon: EpsilonSetting,
    /// Ridge weight; `1e-8 trace(Q) / n` when absent.
    pub ridge: Option<f64>,
    pub envelope: Envelope,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            rho: 0.9,
            grid_m: 256,
            epsilon: EpsilonSetting::Auto,
            ridge: None,
            envelope: Envelope::Elementwise,
            max_iters: 50_000,
            tol: 1e-7,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 >= 1.0 && self.rho0.is_finite()) {
            return Err(invalid(format!("rho0 must be >= 1, got {}", self.rho0)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.grid_m < 2 {
            return Err(invalid("grid_m must be >= 2"));
        }
        if let EpsilonSetting::Value(v) = self.epsilon {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("epsilon must be nonnegative"));
            }
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(invalid("ridge must be nonnegative"));
            }
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// Quadratic VRFT cost plus the constraint data of the synthesis problem.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub objective: LsObjective,
    pub m: usize,
    pub channels: usize,
    pub include_gamma: bool,
    pub ts: f64,
    pub settings: SolverSettings,
}

impl SynthesisProblem {
    pub fn from_regression(reg: &RegressionData, settings: SolverSettings) -> Result<Self> {
        Self::new(
            reg.objective(),
            reg.order(),
            reg.channels(),
            reg.includes_gamma(),
            reg.sample_period(),
            settings,
        )
    }

    /// `objective` must follow the regression column layout: taps ordered by
    /// `k, i, j`, then the upper triangle of `Gamma`.
    pub fn new(
        objective: LsObjective,
        m: usize,
        channels: usize,
        include_gamma: bool,
        ts: f64,
        settings: SolverSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if m == 0 || channels == 0 {
            return Err(invalid("order and channel count must be positive"));
        }
        let p = Layout::new(m, channels, include_gamma).p;
        if objective.q.shape() != (p, p) || objective.c.len() != p {
            return Err(Error::DimensionMismatch {
                what: "synthesis objective",
                expected: p,
                actual: objective.c.len(),
            });
        }
        if !(ts > 0.0) {
            return Err(invalid("sample period must be positive"));
        }
        Ok(Self {
            objective,
            m,
            channels,
            include_gamma,
            ts,
            settings,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.m, self.channels, self.include_gamma)
    }

    pub fn n_params(&self) -> usize {
        self.layout().p
    }

    pub fn epsilon(&self) -> Result<f64> {
        match self.settings.epsilon {
            EpsilonSetting::Value(v) => Ok(v),
            EpsilonSetting::Auto => epsilon_bound(self.m, self.settings.grid_m, self.settings.rho0, self.settings.rho),
        }
    }

    pub fn ridge(&self) -> f64 {
        self.settings.ridge.unwrap_or_else(|| self.objective.default_ridge())
    }

    /// Envelope bound on tap `k`: spectral norm, or per entry.
    pub fn tap_bound(&self, k: usize) -> f64 {
        let b = self.settings.rho0 * self.settings.rho.powi(k as i32);
        match self.settings.envelope {
            Envelope::Spectral => b,
            Envelope::Elementwise => b / self.channels as f64,
        }
    }

    /// Largest `H_0 = alpha I` inside the envelope.
    fn feasible_alpha(&self) -> f64 {
        self.tap_bound(0)
    }

    /// Regularized objective `f(x) + ridge |x|^2`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x) + self.ridge() * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.objective.gradient(x) + x * (2.0 * self.ridge())
    }

    pub fn unpack(&self, x: &DVector<f64>) -> Result<IfirParams> {
        let l = self.layout();
        if x.len() != l.p {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: l.p,
                actual: x.len(),
            });
        }
        IfirParams::new(l.taps(x.as_slice()), l.gamma(x.as_slice()), self.ts)
    }

    pub fn pack(&self, params: &IfirParams) -> Result<DVector<f64>> {
        let l = self.layout();
        if params.order() != self.m || params.channels() != self.channels {
            return Err(invalid("controller shape does not match the problem"));
        }
        let mut x = DVector::zeros(l.p);
        for k in 0..l.m {
            for i in 0..l.n {
                for j in 0..l.n {
                    x[l.tap(k, i, j)] = params.taps[k][(i, j)];
                }
            }
        }
        if l.include_gamma {
            let g = sym(&params.gamma);
            for i in 0..l.n {
                for j in i..l.n {
                    x[l.gamma_index(i, j)] = g[(i, j)];
                }
            }
        }
        Ok(x)
    }

    /// The point `H_0 = alpha I`, other taps and `Gamma` zero.
    fn feasible_point(&self) -> DVector<f64> {
        self.scaled_identity(self.feasible_alpha())
    }

    /// `H_0 = c I` with `c` halfway between the Popov floor and the envelope,
    /// and `Gamma = c I`.
    fn interior_point(&self, epsilon: f64) -> DVector<f64> {
        let c = 0.5 * (0.5 * epsilon + self.feasible_alpha());
        let mut x = self.scaled_identity(c);
        let l = self.layout();
        if l.include_gamma {
            for i in 0..l.n {
                x[l.gamma_index(i, i)] = c;
            }
        }
        x
    }

    fn scaled_identity(&self, c: f64) -> DVector<f64> {
        let l = self.layout();
        let mut x = DVector::zeros(l.p);
        for i in 0..l.n {
            x[l.tap(0, i, i)] = c;
        }
        x
    }

    fn unconstrained(&self) -> Result<DVector<f64>> {
        let mut a = self.objective.q.clone();
        let r = self.ridge();
        for i in 0..a.nrows() {
            a[(i, i)] += r;
        }
        let chol = a.cholesky().ok_or(Error::Singular("synthesis normal matrix"))?;
        Ok(chol.solve(&self.objective.c))
    }
}

/// Index map of the decision vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    m: usize,
    n: usize,
    include_gamma: bool,
    p: usize,
}

impl Layout {
    fn new(m: usize, n: usize, include_gamma: bool) -> Self {
        let p = m * n * n + if include_gamma { n * (n + 1) / 2 } else { 0 };
        Self { m, n, include_gamma, p }
    }

    fn n_taps(&self) -> usize {
        self.m * self.n * self.n
    }

    fn tap(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.n + i) * self.n + j
    }

    fn gamma_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let offset: usize = (0..i).map(|r| self.n - r).sum();
        self.n_taps() + offset + (j - i)
    }

    fn taps(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.n;
        (0..self.m)
            .map(|k| DMatrix::from_fn(n, n, |i, j| x[self.tap(k, i, j)]))
            .collect()
    }

    fn gamma(&self, x: &[f64]) -> DMatrix<f64> {
        if !self.include_gamma {
            return DMatrix::zeros(self.n, self.n);
        }
        DMatrix::from_fn(self.n, self.n, |i, j| x[self.gamma_index(i, j)])
    }

    fn columns(&self) -> Vec<Column> {
        let mut out = Vec::with_capacity(self.p);
        for k in 0..self.m {
            for i in 0..self.n {
                for j in 0..self.n {
                    out.push(Column::Tap { k, i, j });
                }
            }
        }
        if self.include_gamma {
            for i in 0..self.n {
                for j in i..self.n {
                    out.push(Column::Gamma { i, j });
                }
            }
        }
        out
    }
}

/// Frobenius-nearest symmetric matrix with eigenvalues at least `floor`.
pub fn project_psd(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let s = sym(a);
    let n = s.nrows();
    if n == 0 {
        return s;
    }
    if n == 1 {
        return s.map(|v| v.max(floor));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    if (&s - &eye * floor).cholesky().is_some() {
        return s;
    }
    if floor == 0.0 && (-&s).cholesky().is_some() {
        return DMatrix::zeros(n, n);
    }
    let eig = SymmetricEigen::new(s);
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    sym(&(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

fn project_herm(z: &DMatrix<Complex64>, floor: f64) -> DMatrix<Complex64> {
    let n = z.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, Complex64::new(z[(0, 0)].re.max(floor), 0.0));
    }
    let h = (z + z.adjoint()) * Complex64::new(0.5, 0.0);
    if min_eig_herm(&h) >= floor {
        return h;
    }
    let eig = SymmetricEigen::new(h);
    let clipped = eig.eigenvalues.map(|v| Complex64::new(v.max(floor), 0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.adjoint();
    (&out + out.adjoint()) * Complex64::new(0.5, 0.0)
}

fn clip_spectral(h: &DMatrix<f64>, bound: f64) -> DMatrix<f64> {
    if h.nrows() == 1 {
        return h.map(|v| v.clamp(-bound, bound));
    }
    let svd = h.clone().svd(true, true);
    if svd.singular_values.max() <= bound {
        return h.clone();
    }
    let s = svd.singular_values.map(|v| v.min(bound));
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    u * DMatrix::from_diagonal(&s) * vt
}

/// `s F(q pi / M)` for `q = 0..=M`, with its adjoint and Gram matrix.
struct PopovOp {
    m: usize,
    n: usize,
    points: usize,
    len: usize,
    scale: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl PopovOp {
    fn new(m: usize, n: usize, grid_m: usize) -> Self {
        let len = 2 * grid_m;
        let mut planner = FftPlanner::new();
        Self {
            m,
            n,
            points: grid_m + 1,
            len,
            scale: 1.0 / ((grid_m + 1) as f64).sqrt(),
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    fn apply(&self, layout: &Layout, x: &[f64]) -> Vec<DMatrix<Complex64>> {
        let n = self.n;
        let mut spectra = vec![Vec::new(); n * n];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for a in 0..n {
            for b in 0..n {
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for k in 0..self.m {
                    buf[k % self.len] += x[layout.tap(k, a, b)];
                }
                self.forward.process(&mut buf);
                spectra[a * n + b] = buf[..self.points].to_vec();
            }
        }
        (0..self.points)
            .map(|q| {
                DMatrix::from_fn(n, n, |a, b| {
                    (spectra[a * n + b][q] + spectra[b * n + a][q].conj()) * self.scale
                })
            })
            .collect()
    }

    /// Adds `A^T y` into the tap entries of `out`.
    fn adjoint_add(&self, layout: &Layout, ys: &[DMatrix<Complex64>], out: &mut [f64]) {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for a in 0..n {
            for b in 0..n {
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for (q, y) in ys.iter().enumerate() {
                    buf[q] = y[(a, b)];
                }
                self.inverse.process(&mut buf);
                for k in 0..self.m {
                    out[layout.tap(k, a, b)] += 2.0 * self.scale * buf[k % self.len].re;
                }
            }
        }
    }

    /// Tap-by-tap block of `A^T A`.
    fn gram(&self, layout: &Layout) -> DMatrix<f64> {
        let grid_m = self.points - 1;
        let span = 2 * self.m;
        let cosines: Vec<f64> = (0..span)
            .map(|d| {
                (0..self.points)
                    .map(|q| (d as f64 * q as f64 * PI / grid_m as f64).cos())
                    .sum()
            })
            .collect();
        let c = |d: isize| cosines[d.unsigned_abs()];
        let s2 = 2.0 * self.scale * self.scale;
        let nt = layout.n_taps();
        let mut g = DMatrix::zeros(nt, nt);
        let n = self.n;
        for k in 0..self.m {
            for l in 0..self.m {
                let diff = c(k as isize - l as isize);
                let sum = c((k + l) as isize);
                for i in 0..n {
                    for j in 0..n {
                        g[(layout.tap(k, i, j), layout.tap(l, i, j))] += s2 * diff;
                        g[(layout.tap(k, i, j), layout.tap(l, j, i))] += s2 * sum;
                    }
                }
            }
        }
        g
    }
}

/// Constraint-space iterate: envelope copy of the taps, full `Gamma`, and
/// scaled Popov matrices.
#[derive(Debug, Clone)]
struct Slack {
    env: Vec<f64>,
    gam: DMatrix<f64>,
    pop: Vec<DMatrix<Complex64>>,
}

impl Slack {
    fn axpy(&mut self, alpha: f64, other: &Slack) {
        self.env.iter_mut().zip(&other.env).for_each(|(a, b)| *a += alpha * b);
        self.gam += &other.gam * alpha;
        let ca = Complex64::new(alpha, 0.0);
        self.pop.iter_mut().zip(&other.pop).for_each(|(a, b)| *a += b * ca);
    }

    fn scaled(&self, alpha: f64) -> Slack {
        let ca = Complex64::new(alpha, 0.0);
        Slack {
            env: self.env.iter().map(|v| v * alpha).collect(),
            gam: &self.gam * alpha,
            pop: self.pop.iter().map(|p| p * ca).collect(),
        }
    }

    fn sub(&self, other: &Slack) -> Slack {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    fn inf_norm(&self) -> f64 {
        let e = self.env.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let g = self.gam.amax();
        let p = self
            .pop
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |a, v| a.max(v.re.abs()).max(v.im.abs()));
        e.max(g).max(p)
    }
}

struct Operator<'a> {
    problem: &'a SynthesisProblem,
    layout: Layout,
    popov: PopovOp,
}

impl<'a> Operator<'a> {
    fn new(problem: &'a SynthesisProblem, grid_m: usize) -> Self {
        Self {
            problem,
            layout: problem.layout(),
            popov: PopovOp::new(problem.m, problem.channels, grid_m),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> Slack {
        let l = &self.layout;
        Slack {
            env: x.as_slice()[..l.n_taps()].to_vec(),
            gam: l.gamma(x.as_slice()),
            pop: self.popov.apply(l, x.as_slice()),
        }
    }

    fn adjoint(&self, y: &Slack) -> DVector<f64> {
        let l = &self.layout;
        let mut out = vec![0.0; l.p];
        out[..l.n_taps()].copy_from_slice(&y.env);
        if l.include_gamma {
            for i in 0..l.n {
                for j in 0..l.n {
                    out[l.gamma_index(i, j)] += y.gam[(i, j)];
                }
            }
        }
        self.popov.adjoint_add(l, &y.pop, &mut out);
        DVector::from_vec(out)
    }

    fn gram(&self) -> DMatrix<f64> {
        let l = &self.layout;
        let mut g = DMatrix::zeros(l.p, l.p);
        g.view_mut((0, 0), (l.n_taps(), l.n_taps()))
            .copy_from(&self.popov.gram(l));
        for i in 0..l.n_taps() {
            g[(i, i)] += 1.0;
        }
        if l.include_gamma {
            for i in 0..l.n {
                for j in i..l.n {
                    let idx = l.gamma_index(i, j);
                    g[(idx, idx)] += if i == j { 1.0 } else { 2.0 };
                }
            }
        }
        g
    }

    fn project(&self, z: &mut Slack, epsilon: f64) {
        let p = self.problem;
        let n = self.layout.n;
        match p.settings.envelope {
            Envelope::Elementwise => {
                for k in 0..p.m {
                    let b = p.tap_bound(k);
                    for v in &mut z.env[k * n * n..(k + 1) * n * n] {
                        *v = v.clamp(-b, b);
                    }
                }
            }
            Envelope::Spectral => {
                for k in 0..p.m {
                    let h = DMatrix::from_fn(n, n, |i, j| z.env[self.layout.tap(k, i, j)]);
                    let c = clip_spectral(&h, p.tap_bound(k));
                    for i in 0..n {
                        for j in 0..n {
                            z.env[self.layout.tap(k, i, j)] = c[(i, j)];
                        }
                    }
                }
            }
        }
        z.gam = if p.include_gamma {
            project_psd(&z.gam, 0.0)
        } else {
            DMatrix::zeros(n, n)
        };
        let floor = self.popov.scale * epsilon;
        z.pop.par_iter_mut().for_each(|f| *f = project_herm(f, floor));
    }
}

/// Block-wise KKT residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub params: IfirParams,
    /// Regularized objective at the returned parameters.
    pub objective_value: f64,
    /// Regularized objective at the unconstrained optimum.
    pub unconstrained_objective: f64,
    pub kkt_residual: KktResidual,
    pub max_constraint_violation: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub epsilon: f64,
    pub grid_m: usize,
    pub certificate: PassivityCertificate,
}

/// Largest violation of the envelope, Gamma PSD and sampled Popov constraints.
pub fn constraint_violation(problem: &SynthesisProblem, x: &DVector<f64>, epsilon: f64, grid_m: usize) -> f64 {
    let l = problem.layout();
    let taps = l.taps(x.as_slice());
    let mut worst: f64 = 0.0;
    for (k, h) in taps.iter().enumerate() {
        let b = problem.tap_bound(k);
        let size = match problem.settings.envelope {
            Envelope::Elementwise => h.amax(),
            Envelope::Spectral => spectral_norm(h),
        };
        worst = worst.max(size - b);
    }
    if l.include_gamma {
        worst = worst.max(-min_eig_sym(&l.gamma(x.as_slice())));
    }
    for f in popov_on_grid(&taps, grid_m + 1) {
        worst = worst.max(epsilon - min_eig_herm(&f));
    }
    worst
}

/// Solves the constrained synthesis problem.
pub fn synthesize_passive(problem: &SynthesisProblem) -> Result<SynthesisReport> {
    let start = Instant::now();
    let epsilon = problem.epsilon()?;
    let alpha = problem.feasible_alpha();
    if epsilon >= 2.0 * alpha {
        return Err(Error::Infeasible(format!(
            "epsilon = {epsilon:.4e} is not attainable under the tap envelope (needs < {:.4e}); \
             increase grid_m or rho0, or lower epsilon",
            2.0 * alpha
        )));
    }
    let x_free = problem.unconstrained()?;
    let free_value = problem.value(&x_free);
    let mut grid_m = problem.settings.grid_m;
    let max_grid = 8 * grid_m;
    let mut x = x_free.clone();
    let mut iterations = 0;
    let mut converged;
    loop {
        let (xs, it, conv) = admm(problem, &x, epsilon, grid_m)?;
        x = xs;
        iterations += it;
        converged = conv;
        let l = problem.layout();
        let dense = crate::ifir::popov_min_eig(&l.taps(x.as_slice()), DENSE_GRID).0;
        // an explicit epsilon below the bound does not imply dense positivity
        let guaranteed = matches!(problem.settings.epsilon, EpsilonSetting::Auto);
        if guaranteed || dense >= -problem.settings.tol || grid_m * 2 > max_grid {
            break;
        }
        grid_m *= 2;
    }
    let x = feasibility_step(problem, &x, epsilon, grid_m);
    let params = problem.unpack(&x)?;
    let viol = constraint_violation(problem, &x, epsilon, grid_m);
    let kkt = kkt_residual_at(problem, &x, epsilon, grid_m);
    let certificate = passivity_margin(&params, DENSE_GRID)?.with_constraints(
        grid_m,
        epsilon,
        problem.settings.rho0,
        problem.settings.rho,
    );
    Ok(SynthesisReport {
        params,
        objective_value: problem.value(&x),
        unconstrained_objective: free_value,
        kkt_residual: kkt,
        max_constraint_violation: viol.max(0.0),
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged,
        epsilon,
        grid_m,
        certificate,
    })
}

fn admm(problem: &SynthesisProblem, x0: &DVector<f64>, epsilon: f64, grid_m: usize) -> Result<(DVector<f64>, usize, bool)> {
    let op = Operator::new(problem, grid_m);
    let p = op.layout.p;
    let q2 = {
        let mut q = &problem.objective.q * 2.0;
        let r = 2.0 * problem.ridge();
        for i in 0..p {
            q[(i, i)] += r;
        }
        q
    };
    let c2 = &problem.objective.c * 2.0;
    let gram = op.gram();
    let sigma = 1e-6 * (q2.trace() / p as f64).max(1e-12);
    let mut rho = (q2.trace() / gram.trace()).max(1e-8);
    let relax = 1.6;
    let factor = |rho: f64| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let mut k = &q2 + &gram * rho;
        for i in 0..p {
            k[(i, i)] += sigma;
        }
        k.cholesky().ok_or(Error::Singular("ADMM system matrix"))
    };
    let mut chol = factor(rho)?;
    let mut x = x0.clone();
    let mut z = op.apply(&x);
    op.project(&mut z, epsilon);
    let mut w = z.scaled(0.0);
    let tol = problem.settings.tol;
    let check_every = 10;
    let mut history: Vec<f64> = Vec::new();
    let mut refactors = 0;
    for it in 1..=problem.settings.max_iters {
        let rhs = &c2 + &x * sigma + op.adjoint(&z.sub(&w)) * rho;
        x = chol.solve(&rhs);
        let ax = op.apply(&x);
        let mut relaxed = ax.scaled(relax);
        relaxed.axpy(1.0 - relax, &z);
        let z_prev = z.clone();
        let mut znew = relaxed.clone();
        znew.axpy(1.0, &w);
        op.project(&mut znew, epsilon);
        z = znew;
        w.axpy(1.0, &relaxed);
        w.axpy(-1.0, &z);

        if it % check_every != 0 {
            continue;
        }
        let r_prim = ax.sub(&z).inf_norm();
        let y = w.scaled(rho);
        let aty = op.adjoint(&y);
        let grad = &q2 * &x - &c2;
        let r_dual = (&grad + &aty).amax();
        let prim_scale = ax.inf_norm().max(z.inf_norm()).max(1e-12);
        let dual_scale = grad.amax().max(aty.amax()).max(c2.amax()).max(1e-12);
        let value = problem.value(&x);
        history.push(value);
        let span = 50 / check_every;
        let steady = history.len() > span && {
            let old = history[history.len() - 1 - span];
            (value - old).abs() <= 1e-8 * value.abs().max(1e-12)
        };
        let dz = op.adjoint(&z.sub(&z_prev)).amax() * rho;
        let feasible = r_prim <= tol.min(1e-6 * prim_scale).max(1e-14);
        let stationary = r_dual <= 1e-7 * dual_scale && dz <= 1e-7 * dual_scale;
        if feasible && stationary && steady {
            return Ok((x, it, true));
        }
        if it % 50 == 0 && refactors < 40 {
            let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-300)).sqrt();
            if !(0.2..=5.0).contains(&ratio) && ratio.is_finite() {
                let new_rho = (rho * ratio).clamp(1e-10, 1e10);
                w = w.scaled(rho / new_rho);
                rho = new_rho;
                chol = factor(rho)?;
                refactors += 1;
            }
        }
    }
    Ok((x, problem.settings.max_iters, false))
}

/// Clips the envelope and Gamma, then blends toward `H_0 = alpha I` just
/// enough to restore the sampled margin and dense positivity.
fn feasibility_step(problem: &SynthesisProblem, x: &DVector<f64>, epsilon: f64, grid_m: usize) -> DVector<f64> {
    let l = problem.layout();
    let mut x = x.clone();
    for k in 0..l.m {
        let b = problem.tap_bound(k);
        match problem.settings.envelope {
            Envelope::Elementwise => {
                for i in 0..l.n {
                    for j in 0..l.n {
                        let idx = l.tap(k, i, j);
                        x[idx] = x[idx].clamp(-b, b);
                    }
                }
            }
            Envelope::Spectral => {
                let h = DMatrix::from_fn(l.n, l.n, |i, j| x[l.tap(k, i, j)]);
                let c = clip_spectral(&h, b);
                let shrink = if spectral_norm(&c) > b { b / spectral_norm(&c) } else { 1.0 };
                for i in 0..l.n {
                    for j in 0..l.n {
                        x[l.tap(k, i, j)] = c[(i, j)] * shrink;
                    }
                }
            }
        }
    }
    if l.include_gamma {
        let g = project_psd(&l.gamma(x.as_slice()), 0.0);
        for i in 0..l.n {
            for j in i..l.n {
                x[l.gamma_index(i, j)] = g[(i, j)];
            }
        }
    }
    let taps = l.taps(x.as_slice());
    let two_alpha = 2.0 * problem.feasible_alpha();
    let mut t: f64 = 0.0;
    let mut need = |lambda: f64, target: f64| {
        if lambda < target {
            t = t.max((target - lambda) / (two_alpha - lambda));
        }
    };
    for f in popov_on_grid(&taps, grid_m + 1) {
        need(min_eig_herm(&f), epsilon);
    }
    for f in popov_on_grid(&taps, DENSE_GRID) {
        need(min_eig_herm(&f), 0.0);
    }
    if t > 0.0 {
        let t = (t * (1.0 + 1e-9) + 1e-15).min(1.0);
        x = x * (1.0 - t) + problem.feasible_point() * t;
    }
    x
}

pub fn kkt_residual(problem: &SynthesisProblem, params: &IfirParams) -> Result<KktResidual> {
    let x = problem.pack(params)?;
    Ok(kkt_residual_at(problem, &x, problem.epsilon()?, problem.settings.grid_m))
}

/// Multipliers of the near-active constraints by nonnegative least squares on
/// the stationarity condition `grad f = sum_l lambda_l grad g_l`, `g_l >= 0`.
fn kkt_residual_at(problem: &SynthesisProblem, x: &DVector<f64>, epsilon: f64, grid_m: usize) -> KktResidual {
    let l = problem.layout();
    let grad = problem.gradient(x);
    let taps = l.taps(x.as_slice());
    let scale = (2.0 * problem.feasible_alpha()).max(1.0);
    let active_tol = 1e-5 * scale;
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut slacks: Vec<f64> = Vec::new();
    let mut feasibility: f64 = 0.0;

    for (k, h) in taps.iter().enumerate() {
        let b = problem.tap_bound(k);
        match problem.settings.envelope {
            Envelope::Elementwise => {
                for i in 0..l.n {
                    for j in 0..l.n {
                        let v = h[(i, j)];
                        feasibility = feasibility.max(v.abs() - b);
                        let idx = l.tap(k, i, j);
                        if b - v <= active_tol {
                            let mut g = DVector::zeros(l.p);
                            g[idx] = -1.0;
                            normals.push(g);
                            slacks.push(b - v);
                        }
                        if b + v <= active_tol {
                            let mut g = DVector::zeros(l.p);
                            g[idx] = 1.0;
                            normals.push(g);
                            slacks.push(b + v);
                        }
                    }
                }
            }
            Envelope::Spectral => {
                let svd = h.clone().svd(true, true);
                let (imax, smax) = svd.singular_values.argmax();
                feasibility = feasibility.max(smax - b);
                if b - smax <= active_tol {
                    let u = svd.u.as_ref().expect("requested").column(imax).into_owned();
                    let v = svd.v_t.as_ref().expect("requested").row(imax).transpose();
                    let mut g = DVector::zeros(l.p);
                    for i in 0..l.n {
                        for j in 0..l.n {
                            g[l.tap(k, i, j)] = -u[i] * v[j];
                        }
                    }
                    normals.push(g);
                    slacks.push(b - smax);
                }
            }
        }
    }
    if l.include_gamma {
        let gmat = l.gamma(x.as_slice());
        let eig = SymmetricEigen::new(gmat);
        let lo = eig.eigenvalues.min();
        feasibility = feasibility.max(-lo);
        for (idx, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam - lo <= active_tol && *lam <= active_tol {
                let v = eig.eigenvectors.column(idx);
                let mut g = DVector::zeros(l.p);
                for i in 0..l.n {
                    for j in i..l.n {
                        let d = if i == j { v[i] * v[i] } else { 2.0 * v[i] * v[j] };
                        g[l.gamma_index(i, j)] = d;
                    }
                }
                normals.push(g);
                slacks.push(*lam);
            }
        }
    }
    for (q, f) in popov_on_grid(&taps, grid_m + 1).iter().enumerate() {
        let theta = q as f64 * PI / grid_m as f64;
        let eig = SymmetricEigen::new((f + f.adjoint()) * Complex64::new(0.5, 0.0));
        let lo = eig.eigenvalues.min();
        feasibility = feasibility.max(epsilon - lo);
        for (idx, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam - lo <= active_tol && *lam - epsilon <= active_tol {
                let v = eig.eigenvectors.column(idx);
                // d/dH_k[i,j] of v^H F v = 2 Re(conj(v_i) v_j e^{-jk theta})
                let mut g = DVector::zeros(l.p);
                for k in 0..l.m {
                    let w = Complex64::from_polar(1.0, -(k as f64) * theta);
                    for i in 0..l.n {
                        for j in 0..l.n {
                            g[l.tap(k, i, j)] = 2.0 * (v[i].conj() * v[j] * w).re;
                        }
                    }
                }
                normals.push(g);
                slacks.push(*lam - epsilon);
            }
        }
    }

    if normals.is_empty() {
        return KktResidual {
            stationarity: grad.norm(),
            feasibility: feasibility.max(0.0),
            complementarity: 0.0,
        };
    }
    let a = DMatrix::from_columns(&normals);
    let lambda = nnls(&a, &grad);
    let stationarity = (&grad - &a * &lambda).norm();
    let complementarity = lambda
        .iter()
        .zip(&slacks)
        .map(|(lam, s)| (lam * s).abs())
        .sum::<f64>();
    KktResidual {
        stationarity,
        feasibility: feasibility.max(0.0),
        complementarity,
    }
}

/// Lawson-Hanson nonnegative least squares `min |A x - b|, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut out = DVector::zeros(n);
        if idx.is_empty() {
            return out;
        }
        let sub = DMatrix::from_fn(a.nrows(), idx.len(), |i, c| a[(i, idx[c])]);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        for (c, &j) in idx.iter().enumerate() {
            out[j] = sol[c];
        }
        out
    };
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut step: f64 = 1.0;
            for i in 0..n {
                if passive[i] && s[i] <= 0.0 {
                    step = step.min(x[i] / (x[i] - s[i]));
                }
            }
            x = &x + (&s - &x) * step;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

/// Independent reference solve: accelerated projected gradient ascent on the
/// Lagrange dual, every constraint written as a real symmetric linear matrix
/// inequality, followed by a blend toward a strictly feasible point.
pub fn cross_check_projected_gradient(problem: &SynthesisProblem) -> Result<SynthesisReport> {
    cross_check_with(problem, 200_000, 1e-8)
}

pub fn cross_check_with(problem: &SynthesisProblem, max_iters: usize, gap_tol: f64) -> Result<SynthesisReport> {
    let start = Instant::now();
    let epsilon = problem.epsilon()?;
    let alpha = problem.feasible_alpha();
    if epsilon >= 2.0 * alpha {
        return Err(Error::Infeasible("epsilon not attainable under the envelope".into()));
    }
    let l = problem.layout();
    let lmis = build_lmis(problem, epsilon);
    let p = l.p;
    // all blocks stacked column-major: B(x) = offset + stacked x
    let mut offsets = Vec::with_capacity(lmis.len());
    let mut total = 0;
    for lmi in &lmis {
        offsets.push(total);
        total += lmi.dim * lmi.dim;
    }
    let mut stacked = DMatrix::<f64>::zeros(total, p);
    let mut offset = DVector::<f64>::zeros(total);
    for (lmi, &at) in lmis.iter().zip(&offsets) {
        let d2 = lmi.dim * lmi.dim;
        offset.rows_mut(at, d2).copy_from_slice(lmi.constant.as_slice());
        for (i, bi) in lmi.coeffs.iter().enumerate() {
            stacked.view_mut((at, i), (d2, 1)).copy_from_slice(bi.as_slice());
        }
    }
    let mut qr = problem.objective.q.clone();
    for i in 0..p {
        qr[(i, i)] += problem.ridge();
    }
    let chol = qr.clone().cholesky().ok_or(Error::Singular("oracle normal matrix"))?;
    let c = problem.objective.c.clone();
    let stacked_t = stacked.transpose();
    let primal = |lam: &DVector<f64>| -> DVector<f64> { chol.solve(&(&c + &stacked_t * lam * 0.5)) };
    let eval = |x: &DVector<f64>| -> DVector<f64> { &offset + &stacked * x };
    let project = |v: &mut DVector<f64>| {
        for (lmi, &at) in lmis.iter().zip(&offsets) {
            let d = lmi.dim;
            let block = DMatrix::from_column_slice(d, d, &v.as_slice()[at..at + d * d]);
            let proj = project_psd(&block, 0.0);
            v.rows_mut(at, d * d).copy_from_slice(proj.as_slice());
        }
    };
    // Lipschitz constant of the dual gradient: lambda_max(B Q^-1 B^T) / 2
    let linv = chol
        .l()
        .try_inverse()
        .ok_or(Error::Singular("oracle normal matrix"))?;
    let whitened = &linv * (&stacked_t * &stacked) * linv.transpose();
    let lip = 0.5 * SymmetricEigen::new(whitened).eigenvalues.max();
    let step = 1.0 / lip.max(1e-300);
    let mut lam = DVector::<f64>::zeros(total);
    let mut y = lam.clone();
    let mut tk: f64 = 1.0;
    let mut iterations = 0;
    let mut best = problem.interior_point(epsilon);
    for it in 1..=max_iters {
        iterations = it;
        let x = primal(&y);
        let mut next = &y - eval(&x) * step;
        project(&mut next);
        // gradient-based adaptive restart
        if (&y - &next).dot(&(&next - &lam)) > 0.0 {
            tk = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let mom = (tk - 1.0) / t_next;
        y = &next + (&next - &lam) * mom;
        lam = next;
        tk = t_next;
        if it % 100 == 0 || it == max_iters {
            let xl = primal(&lam);
            let value = problem.value(&xl);
            let dual = value - lam.dot(&eval(&xl));
            let tol = gap_tol * value.abs().max(1e-12);
            if value - dual > tol && it < max_iters {
                continue;
            }
            let xf = blend_feasible(problem, &lmis, epsilon, &xl);
            let pv = problem.value(&xf);
            best = xf;
            if pv - dual <= tol {
                break;
            }
        }
    }
    let params = problem.unpack(&best)?;
    let viol = constraint_violation(problem, &best, epsilon, problem.settings.grid_m);
    let certificate = passivity_margin(&params, DENSE_GRID)?.with_constraints(
        problem.settings.grid_m,
        epsilon,
        problem.settings.rho0,
        problem.settings.rho,
    );
    Ok(SynthesisReport {
        objective_value: problem.value(&best),
        unconstrained_objective: problem.value(&problem.unconstrained()?),
        kkt_residual: kkt_residual_at(problem, &best, epsilon, problem.settings.grid_m),
        max_constraint_violation: viol.max(0.0),
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: iterations < max_iters,
        epsilon,
        grid_m: problem.settings.grid_m,
        certificate,
        params,
    })
}

/// `B(x) = B_0 + sum_i x_i B_i >= 0`.
struct Lmi {
    dim: usize,
    constant: DMatrix<f64>,
    coeffs: Vec<DMatrix<f64>>,
}

impl Lmi {
    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (xi, b) in x.iter().zip(&self.coeffs) {
            if *xi != 0.0 {
                out += b * *xi;
            }
        }
        out
    }
}

fn build_lmis(problem: &SynthesisProblem, epsilon: f64) -> Vec<Lmi> {
    let l = problem.layout();
    let n = l.n;
    let p = l.p;
    let cols = l.columns();
    let mut out = Vec::new();
    let basis = |dim: usize| vec![DMatrix::<f64>::zeros(dim, dim); p];
    for k in 0..l.m {
        let b = problem.tap_bound(k);
        match problem.settings.envelope {
            Envelope::Elementwise => {
                for i in 0..n {
                    for j in 0..n {
                        for sign in [1.0, -1.0] {
                            let mut coeffs = basis(1);
                            coeffs[l.tap(k, i, j)][(0, 0)] = -sign;
                            out.push(Lmi {
                                dim: 1,
                                constant: DMatrix::from_element(1, 1, b),
                                coeffs,
                            });
                        }
                    }
                }
            }
            Envelope::Spectral => {
                // [[b I, H], [H^T, b I]] >= 0
                let mut coeffs = basis(2 * n);
                for i in 0..n {
                    for j in 0..n {
                        let m = &mut coeffs[l.tap(k, i, j)];
                        m[(i, n + j)] = 1.0;
                        m[(n + j, i)] = 1.0;
                    }
                }
                out.push(Lmi {
                    dim: 2 * n,
                    constant: DMatrix::identity(2 * n, 2 * n) * b,
                    coeffs,
                });
            }
        }
    }
    if l.include_gamma {
        let mut coeffs = basis(n);
        for (idx, c) in cols.iter().enumerate() {
            if let Column::Gamma { i, j } = *c {
                coeffs[idx][(i, j)] = 1.0;
                coeffs[idx][(j, i)] = 1.0;
            }
        }
        out.push(Lmi {
            dim: n,
            constant: DMatrix::zeros(n, n),
            coeffs,
        });
    }
    let grid_m = problem.settings.grid_m;
    for q in 0..=grid_m {
        let theta = q as f64 * PI / grid_m as f64;
        // real embedding [[Re F, -Im F], [Im F, Re F]] - eps I
        let mut coeffs = basis(2 * n);
        for (idx, c) in cols.iter().enumerate() {
            if let Column::Tap { k, i, j } = *c {
                let (s, co) = (k as f64 * theta).sin_cos();
                let m = &mut coeffs[idx];
                // d Re F = (E_ij + E_ji) cos, d Im F = (E_ji - E_ij) sin
                for (r, cc, re, im) in [(i, j, co, -s), (j, i, co, s)] {
                    m[(r, cc)] += re;
                    m[(n + r, n + cc)] += re;
                    m[(n + r, cc)] += im;
                    m[(r, n + cc)] -= im;
                }
            }
        }
        out.push(Lmi {
            dim: 2 * n,
            constant: DMatrix::identity(2 * n, 2 * n) * -epsilon,
            coeffs,
        });
    }
    out
}

fn blend_feasible(problem: &SynthesisProblem, lmis: &[Lmi], epsilon: f64, x: &DVector<f64>) -> DVector<f64> {
    let xf = problem.interior_point(epsilon);
    let ok = |t: f64| {
        let xt = x * (1.0 - t) + &xf * t;
        lmis.iter().all(|b| min_eig_sym(&b.eval(&xt)) >= 0.0)
    };
    if ok(0.0) {
        return x.clone();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    x * (1.0 - hi) + &xf * hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::Signal;
    use crate::vrft::{build_regression, RegressionOptions};
    use approx::assert_relative_eq;

    fn toy() -> SynthesisProblem {
        let e = Signal::from_channels(0.01, &[vec![1.0, -0.5, 0.8]]).unwrap();
        let reg = build_regression(&e, &e.scaled(-1.0), 1).unwrap();
        SynthesisProblem::from_regression(
            &reg,
            SolverSettings {
                rho0: 1.0,
                rho: 0.5,
                grid_m: 2,
                epsilon: EpsilonSetting::Value(0.0),
                ridge: Some(0.0),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn psd_projection_examples() {
        let d = project_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0])), 0.0);
        assert_relative_eq!(d, DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.0])), epsilon = 1e-12);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(project_psd(&a, 0.0), a, epsilon = 1e-12);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_relative_eq!(project_psd(&swap, 0.0), DMatrix::from_element(2, 2, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn epsilon_setting_json() {
        let s: SolverSettings = serde_json::from_str(r#"{"epsilon": "auto", "grid_m": 64}"#).unwrap();
        assert_eq!(s.epsilon, EpsilonSetting::Auto);
        let s: SolverSettings = serde_json::from_str(r#"{"epsilon": 0.01}"#).unwrap();
        assert_eq!(s.epsilon, EpsilonSetting::Value(0.01));
        assert!(serde_json::from_str::<SolverSettings>(r#"{"epsilon": "big"}"#).is_err());
        assert!(serde_json::from_str::<SolverSettings>(r#"{"unknown": 1}"#).is_err());
        let v = serde_json::to_value(SolverSettings::default()).unwrap();
        assert_eq!(v["epsilon"], "auto");
        assert_eq!(v["envelope"], "elementwise");
    }

    #[test]
    fn popov_operator_adjoint_and_gram() {
        let layout = Layout::new(3, 2, false);
        let op = PopovOp::new(3, 2, 5);
        let x: Vec<f64> = (0..layout.p).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let y: Vec<DMatrix<Complex64>> = (0..6)
            .map(|q| {
                let r = DMatrix::from_fn(2, 2, |i, j| Complex64::new((q + i + 2 * j) as f64, (q * i) as f64 - j as f64));
                (&r + r.adjoint()) * Complex64::new(0.5, 0.0)
            })
            .collect();
        let ax = op.apply(&layout, &x);
        let lhs: f64 = ax
            .iter()
            .zip(&y)
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(u, v)| (u.conj() * v).re).sum::<f64>())
            .sum();
        let mut aty = vec![0.0; layout.p];
        op.adjoint_add(&layout, &y, &mut aty);
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        let gram = op.gram(&layout);
        for col in 0..layout.p {
            let mut e = vec![0.0; layout.p];
            e[col] = 1.0;
            let mut out = vec![0.0; layout.p];
            op.adjoint_add(&layout, &op.apply(&layout, &e), &mut out);
            for row in 0..layout.p {
                assert!((gram[(row, col)] - out[row]).abs() < 1e-9);
            }
        }
        // the scaled operator matches the direct Popov evaluation
        let taps = layout.taps(&x);
        for (q, f) in ax.iter().enumerate() {
            let direct = crate::ifir::popov_of_taps(&taps, q as f64 * PI / 5.0);
            let diff = f / Complex64::new(op.scale, 0.0) - direct;
            assert!(diff.iter().all(|v| v.norm() < 1e-9));
        }
    }

    #[test]
    fn hand_solved_instance() {
        let prob = toy();
        let rep = synthesize_passive(&prob).unwrap();
        assert!(rep.params.taps[0][(0, 0)].abs() < 1e-7, "{:?}", rep.params);
        assert!(rep.params.gamma[(0, 0)].abs() < 1e-7);
        assert!(rep.kkt_residual.stationarity <= 1e-7, "{:?}", rep.kkt_residual);
        assert!(rep.kkt_residual.feasibility <= 1e-7);
        assert!(rep.kkt_residual.complementarity <= 1e-7);
        let oracle = cross_check_projected_gradient(&prob).unwrap();
        assert!(oracle.params.taps[0][(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn inactive_constraints_keep_the_free_optimum() {
        let e = Signal::from_fn(0.01, 200, 1, |k, _| ((k * 37 % 17) as f64 - 8.0) / 8.0).unwrap();
        let truth = IfirParams::siso(&[0.5, 0.1], 0.2, 0.01).unwrap();
        let u = crate::ifir::eval_ifir(&truth, &e).unwrap();
        let reg = build_regression(&e, &u, 2).unwrap();
        let prob = SynthesisProblem::from_regression(
            &reg,
            SolverSettings {
                rho0: 1.0,
                rho: 0.5,
                grid_m: 16,
                epsilon: EpsilonSetting::Value(0.0),
                ..Default::default()
            },
        )
        .unwrap();
        let rep = synthesize_passive(&prob).unwrap();
        assert!((rep.objective_value - rep.unconstrained_objective).abs() <= 1e-9);
        let x = prob.pack(&rep.params).unwrap();
        let x0 = prob.unconstrained().unwrap();
        assert!((&x - &x0).amax() < 1e-6, "{x} {x0}");
        assert!((&x0 - prob.pack(&truth).unwrap()).amax() < 1e-4);
        let k = kkt_residual(&prob, &rep.params).unwrap();
        assert!(k.stationarity <= 1e-8, "{k:?}");
    }

    #[test]
    fn infeasible_epsilon_is_reported() {
        let mut prob = toy();
        prob.settings.epsilon = EpsilonSetting::Value(2.5);
        assert!(matches!(synthesize_passive(&prob), Err(Error::Infeasible(_))));
    }

    #[test]
    fn kkt_reports_infeasibility_without_failing() {
        let prob = toy();
        let bad = IfirParams::siso(&[-1.0], -0.5, 0.01).unwrap();
        let k = kkt_residual(&prob, &bad).unwrap();
        assert!(k.feasibility > 0.0);
    }

    #[test]
    fn envelope_bounds_hold() {
        let e = Signal::from_fn(0.01, 300, 1, |k, _| (0.37 * k as f64).sin() + (1.3 * k as f64).cos()).unwrap();
        let truth = IfirParams::siso(&[1.5, -0.9, 0.7, 0.6], 0.0, 0.01).unwrap();
        let u = crate::ifir::eval_ifir(&truth, &e).unwrap();
        let reg = crate::vrft::build_regression_with(
            &e,
            &u,
            4,
            &RegressionOptions {
                include_gamma: false,
                ..Default::default()
            },
        )
        .unwrap();
        let prob = SynthesisProblem::from_regression(
            &reg,
            SolverSettings {
                rho0: 1.0,
                rho: 0.5,
                grid_m: 32,
                epsilon: EpsilonSetting::Value(0.0),
                ..Default::default()
            },
        )
        .unwrap();
        let rep = synthesize_passive(&prob).unwrap();
        for (k, h) in rep.params.taps.iter().enumerate() {
            assert!(h[(0, 0)].abs() <= 0.5f64.powi(k as i32) + 1e-9);
        }
        assert!(rep.certificate.verdict);
        assert!(rep.max_constraint_violation <= 1e-7);
    }

    #[test]
    fn nnls_matches_known_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1].abs() < 1e-12);
    }
}
