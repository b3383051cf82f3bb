//! Virtual-reference feedback tuning: virtual error construction, the
//! least-squares regression for iFIR controllers, and VRFT-tuned PID baselines.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ifir::IfirParams;
use crate::linalg::{poly, sym};
use crate::lti::{approximate_inverse, simulate_lti, ContinuousTf, DiscreteSs, Discretization};
use crate::serde_mat;
use crate::signals::{check_same_shape, Signal};

/// How the approximate reference-model inverse is built and sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseConfig {
    pub pole_scale: f64,
    pub method: Discretization,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            pole_scale: 10.0,
            method: Discretization::Tustin,
        }
    }
}

/// `e = M_r^-1(y) - y` with the approximate inverse sampled at the rate of `y`.
pub fn virtual_error(y: &Signal, m_r: &ContinuousTf, cfg: &InverseConfig) -> Result<Signal> {
    let (q, p) = m_r.dims();
    if q != p || y.channels() != q {
        return Err(Error::DimensionMismatch {
            what: "reference model channels",
            expected: y.channels(),
            actual: q,
        });
    }
    let inv = approximate_inverse(m_r, cfg.pole_scale)?;
    let inv = inv.discretize(y.sample_period(), cfg.method)?;
    virtual_error_with_inverse(y, &inv)
}

/// Virtual error with a caller-supplied discrete inverse.
pub fn virtual_error_with_inverse(y: &Signal, inverse: &DiscreteSs) -> Result<Signal> {
    let r = simulate_lti(inverse, y, None)?;
    check_same_shape(&r, y)?;
    Ok(Signal::new(y.sample_period(), r.samples() - y.samples())?.with_start_time(y.start_time()))
}

/// Virtual error through the exact inverse of a discrete reference model
/// `num(z)/den(z)` applied to every channel. The inverse is non-causal by the
/// relative degree `d`, so the last `d` samples are dropped.
pub fn virtual_error_exact(y: &Signal, num: &[f64], den: &[f64]) -> Result<Signal> {
    let num = poly::trim(num);
    let den = poly::trim(den);
    if poly::is_zero(&num) || poly::is_zero(&den) {
        return Err(invalid("reference model polynomials must be nonzero"));
    }
    let (nb, na) = (num.len() - 1, den.len() - 1);
    if nb > na {
        return Err(invalid("reference model must be proper"));
    }
    let d = na - nb;
    let n = y.len();
    if n <= d {
        return Err(invalid("record shorter than the reference relative degree"));
    }
    let len = n - d;
    let mut out = DMatrix::zeros(len, y.channels());
    for c in 0..y.channels() {
        let yc = y.channel(c);
        let mut r = vec![0.0; len];
        for t in 0..len {
            let mut acc = 0.0;
            for (i, a) in den.iter().enumerate() {
                if let Some(idx) = (t + d).checked_sub(i) {
                    acc += a * yc[idx];
                }
            }
            for (i, b) in num.iter().enumerate().skip(1) {
                if i <= t {
                    acc -= b * r[t - i];
                }
            }
            r[t] = acc / num[0];
            out[(t, c)] = r[t] - yc[t];
        }
    }
    Ok(Signal::new(y.sample_period(), out)?.with_start_time(y.start_time()))
}

/// Treatment of regression rows whose lag window reaches before the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum History {
    #[default]
    ZeroPad,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionOptions {
    pub include_gamma: bool,
    pub history: History,
    /// Filter applied to both `e` and `u` before fitting; identity when absent.
    pub prefilter: Option<DiscreteSs>,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            include_gamma: true,
            history: History::ZeroPad,
            prefilter: None,
        }
    }
}

/// Decision variable attached to a regressor column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    Tap { k: usize, i: usize, j: usize },
    /// Symmetric integral gain entry, `i <= j`.
    Gamma { i: usize, j: usize },
}

/// The VRFT least-squares problem in the iFIR parameters.
///
/// The regressor matrix has `samples * channels` rows (time-major) and is only
/// materialized on request; the normal equations are built from lagged
/// correlations directly.
#[derive(Debug, Clone)]
pub struct RegressionData {
    e: Signal,
    u: Signal,
    m: usize,
    include_gamma: bool,
    first_row: usize,
    columns: Vec<Column>,
}

/// `f(x) = x^T Q x - 2 c^T x + u0`, the mean squared fitting error.
#[derive(Debug, Clone, PartialEq)]
pub struct LsObjective {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub u0: f64,
}

impl LsObjective {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (x.dot(&(&self.q * x)) - 2.0 * self.c.dot(x) + self.u0).max(0.0)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.q * x - &self.c) * 2.0
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `1e-8 trace(Q) / n`.
    pub fn default_ridge(&self) -> f64 {
        1e-8 * self.q.trace() / self.dim().max(1) as f64
    }
}

pub fn build_regression(e: &Signal, u: &Signal, m: usize) -> Result<RegressionData> {
    build_regression_with(e, u, m, &RegressionOptions::default())
}

pub fn build_regression_with(e: &Signal, u: &Signal, m: usize, opts: &RegressionOptions) -> Result<RegressionData> {
    check_same_shape(e, u)?;
    if m == 0 {
        return Err(invalid("iFIR order must be >= 1"));
    }
    if e.len() <= m {
        return Err(invalid(format!("need more than m = {m} samples, got {}", e.len())));
    }
    let (e, u) = match &opts.prefilter {
        Some(f) => (simulate_lti(f, e, None)?, simulate_lti(f, u, None)?),
        None => (e.clone(), u.clone()),
    };
    check_same_shape(&e, &u)?;
    let n = e.channels();
    let mut columns = Vec::with_capacity(m * n * n + n * (n + 1) / 2);
    for k in 0..m {
        for i in 0..n {
            for j in 0..n {
                columns.push(Column::Tap { k, i, j });
            }
        }
    }
    if opts.include_gamma {
        for i in 0..n {
            for j in i..n {
                columns.push(Column::Gamma { i, j });
            }
        }
    }
    let first_row = match opts.history {
        History::ZeroPad => 0,
        History::Discard => m - 1,
    };
    Ok(RegressionData {
        e,
        u,
        m,
        include_gamma: opts.include_gamma,
        first_row,
        columns,
    })
}

impl RegressionData {
    pub fn channels(&self) -> usize {
        self.e.channels()
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn includes_gamma(&self) -> bool {
        self.include_gamma
    }

    pub fn sample_period(&self) -> f64 {
        self.e.sample_period()
    }

    pub fn error_signal(&self) -> &Signal {
        &self.e
    }

    pub fn input_signal(&self) -> &Signal {
        &self.u
    }

    /// Time index of the first regression row.
    pub fn first_row(&self) -> usize {
        self.first_row
    }

    pub fn samples(&self) -> usize {
        self.e.len() - self.first_row
    }

    pub fn rows(&self) -> usize {
        self.samples() * self.channels()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_params(&self) -> usize {
        self.columns.len()
    }

    fn integral(&self) -> Vec<Vec<f64>> {
        let ts = self.sample_period();
        (0..self.channels())
            .map(|c| {
                let mut acc = 0.0;
                self.e
                    .channel(c)
                    .iter()
                    .map(|v| {
                        acc += v;
                        ts * acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Dense regressor matrix.
    pub fn phi(&self) -> DMatrix<f64> {
        let n = self.channels();
        let s = self.integral();
        let mut phi = DMatrix::zeros(self.rows(), self.n_params());
        for t in self.first_row..self.e.len() {
            let base = (t - self.first_row) * n;
            for (col, c) in self.columns.iter().enumerate() {
                match *c {
                    Column::Tap { k, i, j } => {
                        if t >= k {
                            phi[(base + i, col)] = self.e.get(t - k, j);
                        }
                    }
                    Column::Gamma { i, j } => {
                        phi[(base + i, col)] = s[j][t];
                        if i != j {
                            phi[(base + j, col)] = s[i][t];
                        }
                    }
                }
            }
        }
        phi
    }

    /// Stacked `u` samples matching the rows of [`RegressionData::phi`].
    pub fn target(&self) -> DVector<f64> {
        let n = self.channels();
        DVector::from_fn(self.rows(), |r, _| self.u.get(self.first_row + r / n, r % n))
    }

    /// Normal equations scaled by the number of samples.
    pub fn objective(&self) -> LsObjective {
        let n = self.channels();
        let m = self.m;
        let g = usize::from(self.include_gamma);
        let dim = (m + g) * n;
        let len = self.e.len();
        let t0 = self.first_row;
        let e: Vec<Vec<f64>> = (0..n).map(|c| self.e.channel(c)).collect();
        let u: Vec<Vec<f64>> = (0..n).map(|c| self.u.channel(c)).collect();
        let s = if self.include_gamma { self.integral() } else { Vec::new() };
        let lagged = |ch: usize, t: isize| -> f64 {
            if t < 0 {
                0.0
            } else {
                e[ch][t as usize]
            }
        };

        // z(t) = [e(t); e(t-1); ...; e(t-m+1); ts S(t)]
        let mut r = DMatrix::<f64>::zeros(dim, dim);
        for l in 0..m {
            for a in 0..n {
                for b in 0..n {
                    let mut acc = 0.0;
                    for t in t0.max(l)..len {
                        acc += e[a][t] * e[b][t - l];
                    }
                    r[(a, l * n + b)] = acc;
                    r[(l * n + b, a)] = acc;
                }
            }
        }
        for k in 0..m.saturating_sub(1) {
            for l in 0..m - 1 {
                if l < k {
                    continue;
                }
                for a in 0..n {
                    for b in 0..n {
                        let tail = lagged(a, len as isize - 1 - k as isize) * lagged(b, len as isize - 1 - l as isize);
                        let head = lagged(a, t0 as isize - 1 - k as isize) * lagged(b, t0 as isize - 1 - l as isize);
                        let v = r[(k * n + a, l * n + b)] - tail + head;
                        r[((k + 1) * n + a, (l + 1) * n + b)] = v;
                        r[((l + 1) * n + b, (k + 1) * n + a)] = v;
                    }
                }
            }
        }
        let mut p = DMatrix::<f64>::zeros(dim, n);
        for k in 0..m {
            for j in 0..n {
                for i in 0..n {
                    let mut acc = 0.0;
                    for t in t0.max(k)..len {
                        acc += e[j][t - k] * u[i][t];
                    }
                    p[(k * n + j, i)] = acc;
                }
            }
        }
        if self.include_gamma {
            let off = m * n;
            for k in 0..m {
                for a in 0..n {
                    for b in 0..n {
                        let mut acc = 0.0;
                        for t in t0.max(k)..len {
                            acc += e[a][t - k] * s[b][t];
                        }
                        r[(k * n + a, off + b)] = acc;
                        r[(off + b, k * n + a)] = acc;
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let acc: f64 = (t0..len).map(|t| s[a][t] * s[b][t]).sum();
                    r[(off + a, off + b)] = acc;
                }
                for i in 0..n {
                    p[(off + a, i)] = (t0..len).map(|t| s[a][t] * u[i][t]).sum();
                }
            }
        }

        let scale = 1.0 / self.samples() as f64;
        let entries: Vec<Vec<(usize, usize)>> = self
            .columns
            .iter()
            .map(|c| match *c {
                Column::Tap { k, i, j } => vec![(i, k * n + j)],
                Column::Gamma { i, j } if i == j => vec![(i, m * n + j)],
                Column::Gamma { i, j } => vec![(i, m * n + j), (j, m * n + i)],
            })
            .collect();
        let np = self.n_params();
        let mut q = DMatrix::<f64>::zeros(np, np);
        let mut c = DVector::<f64>::zeros(np);
        for a in 0..np {
            for &(i, col) in &entries[a] {
                c[a] += p[(col, i)] * scale;
            }
            for b in a..np {
                let mut acc = 0.0;
                for &(i, ca) in &entries[a] {
                    for &(i2, cb) in &entries[b] {
                        if i == i2 {
                            acc += r[(ca, cb)];
                        }
                    }
                }
                q[(a, b)] = acc * scale;
                q[(b, a)] = acc * scale;
            }
        }
        let u0 = (t0..len)
            .map(|t| (0..n).map(|i| u[i][t] * u[i][t]).sum::<f64>())
            .sum::<f64>()
            * scale;
        LsObjective { q, c, u0 }
    }

    /// Parameter vector to controller.
    pub fn unpack(&self, x: &DVector<f64>) -> Result<IfirParams> {
        if x.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.n_params(),
                actual: x.len(),
            });
        }
        let n = self.channels();
        let mut taps = vec![DMatrix::zeros(n, n); self.m];
        let mut gamma = DMatrix::zeros(n, n);
        for (v, c) in x.iter().zip(&self.columns) {
            match *c {
                Column::Tap { k, i, j } => taps[k][(i, j)] = *v,
                Column::Gamma { i, j } => {
                    gamma[(i, j)] = *v;
                    gamma[(j, i)] = *v;
                }
            }
        }
        IfirParams::new(taps, gamma, self.sample_period())
    }

    /// Controller to parameter vector; `Gamma` is read from its symmetric part.
    pub fn pack(&self, params: &IfirParams) -> Result<DVector<f64>> {
        if params.channels() != self.channels() || params.order() != self.m {
            return Err(invalid("controller shape does not match the regression"));
        }
        let g = sym(&params.gamma);
        Ok(DVector::from_iterator(
            self.n_params(),
            self.columns.iter().map(|c| match *c {
                Column::Tap { k, i, j } => params.taps[k][(i, j)],
                Column::Gamma { i, j } => g[(i, j)],
            }),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedFit {
    pub params: IfirParams,
    pub x: DVector<f64>,
    /// Mean squared residual without the ridge term.
    pub objective: f64,
    pub ridge: f64,
}

/// Ridge-regularized least squares; `ridge = None` selects the default.
pub fn fit_unconstrained(reg: &RegressionData, ridge: Option<f64>) -> Result<UnconstrainedFit> {
    let obj = reg.objective();
    fit_objective(reg, &obj, ridge)
}

pub fn fit_objective(reg: &RegressionData, obj: &LsObjective, ridge: Option<f64>) -> Result<UnconstrainedFit> {
    let lambda = ridge.unwrap_or_else(|| obj.default_ridge());
    if !(lambda >= 0.0) {
        return Err(invalid("ridge must be nonnegative"));
    }
    let x = solve_ridge(&obj.q, &obj.c, lambda)?;
    Ok(UnconstrainedFit {
        params: reg.unpack(&x)?,
        objective: obj.value(&x),
        x,
        ridge: lambda,
    })
}

fn solve_ridge(q: &DMatrix<f64>, c: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let mut a = q.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = a.cholesky().ok_or(Error::Singular("regression normal matrix"))?;
    let x = chol.solve(c);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("regression normal matrix"));
    }
    Ok(x)
}

/// `u = Kp e + Ki ts sum(e) + Kd d`, with `d` a first-order filtered difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    #[serde(with = "serde_mat")]
    pub kp: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub ki: DMatrix<f64>,
    #[serde(with = "serde_mat")]
    pub kd: DMatrix<f64>,
    pub tau_d: f64,
    pub ts: f64,
}

impl PidParams {
    pub fn new(kp: DMatrix<f64>, ki: DMatrix<f64>, kd: DMatrix<f64>, tau_d: f64, ts: f64) -> Result<Self> {
        let p = Self { kp, ki, kd, tau_d, ts };
        p.validate()?;
        Ok(p)
    }

    pub fn siso(kp: f64, ki: f64, kd: f64, tau_d: f64, ts: f64) -> Result<Self> {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::new(s(kp), s(ki), s(kd), tau_d, ts)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kp.nrows();
        if n == 0 || [&self.kp, &self.ki, &self.kd].iter().any(|m| m.shape() != (n, n)) {
            return Err(invalid("PID gains must be square matrices of equal size"));
        }
        if !(self.tau_d > 0.0) || !(self.ts > 0.0) {
            return Err(invalid("PID tau_d and ts must be positive"));
        }
        if [&self.kp, &self.ki, &self.kd].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(invalid("non-finite PID gain"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.kp.nrows()
    }

    fn pole(&self) -> f64 {
        self.tau_d / (self.tau_d + self.ts)
    }

    /// Instantaneous gain from `e(t)` to `u(t)`.
    pub fn feedthrough(&self) -> DMatrix<f64> {
        &self.kp + &self.ki * self.ts + &self.kd / (self.tau_d + self.ts)
    }

    pub fn state(&self) -> PidState<'_> {
        PidState::new(self)
    }

    /// Smallest eigenvalue over the symmetric parts of the three gains, and
    /// the largest asymmetry.
    pub fn gain_margins(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut asym: f64 = 0.0;
        for g in [&self.kp, &self.ki, &self.kd] {
            lo = lo.min(crate::linalg::min_eig_sym(g));
            asym = asym.max((g - g.transpose()).amax());
        }
        (lo, asym)
    }

    pub fn freq_response(&self, omega_rad_s: f64) -> Result<DMatrix<Complex64>> {
        let z = Complex64::from_polar(1.0, omega_rad_s * self.ts);
        let zi = z.inv();
        let den = 1.0 - zi;
        if den.norm() < 1e-14 && self.ki.iter().any(|v| *v != 0.0) {
            return Err(Error::AtPole(omega_rad_s));
        }
        let integ = if den.norm() < 1e-14 { Complex64::new(0.0, 0.0) } else { self.ts / den };
        let deriv = (1.0 - zi) / ((self.tau_d + self.ts) * (1.0 - self.pole() * zi));
        let n = self.channels();
        Ok(DMatrix::from_fn(n, n, |i, j| {
            self.kp[(i, j)] + integ * self.ki[(i, j)] + deriv * self.kd[(i, j)]
        }))
    }
}

#[derive(Debug, Clone)]
pub struct PidState<'a> {
    params: &'a PidParams,
    integral: DVector<f64>,
    prev: DVector<f64>,
    deriv: DVector<f64>,
}

impl<'a> PidState<'a> {
    pub fn new(params: &'a PidParams) -> Self {
        let n = params.channels();
        Self {
            params,
            integral: DVector::zeros(n),
            prev: DVector::zeros(n),
            deriv: DVector::zeros(n),
        }
    }

    pub fn reset(&mut self) {
        self.integral.fill(0.0);
        self.prev.fill(0.0);
        self.deriv.fill(0.0);
    }

    pub fn step(&mut self, e: &DVector<f64>) -> DVector<f64> {
        let p = self.params;
        self.integral += e;
        self.deriv = &self.deriv * p.pole() + (e - &self.prev) / (p.tau_d + p.ts);
        self.prev.copy_from(e);
        &p.kp * e + &p.ki * &self.integral * p.ts + &p.kd * &self.deriv
    }
}

pub fn eval_pid(params: &PidParams, error_history: &Signal) -> Result<Signal> {
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PidFitOptions {
    /// Derivative filter time constant; `2 ts` when absent.
    pub tau_d: Option<f64>,
    pub ridge: Option<f64>,
}

pub fn fit_pid(e: &Signal, u: &Signal, passive: bool) -> Result<PidParams> {
    fit_pid_with(e, u, passive, &PidFitOptions::default())
}

/// Least squares of `u` on `[e, ts sum(e), d]`; with `passive` every gain is
/// constrained to be symmetric positive semidefinite.
pub fn fit_pid_with(e: &Signal, u: &Signal, passive: bool, opts: &PidFitOptions) -> Result<PidParams> {
    check_same_shape(e, u)?;
    let n = e.channels();
    let ts = e.sample_period();
    let tau_d = opts.tau_d.unwrap_or(2.0 * ts);
    if !(tau_d > 0.0) {
        return Err(invalid("tau_d must be positive"));
    }
    if e.len() < 3 {
        return Err(invalid("PID fit needs at least three samples"));
    }
    let probe = PidParams::new(
        DMatrix::zeros(n, n),
        DMatrix::zeros(n, n),
        DMatrix::zeros(n, n),
        tau_d,
        ts,
    )?;
    let dim = 3 * n;
    let mut r = DMatrix::<f64>::zeros(dim, dim);
    let mut p = DMatrix::<f64>::zeros(dim, n);
    let mut integral = DVector::<f64>::zeros(n);
    let mut prev = DVector::<f64>::zeros(n);
    let mut deriv = DVector::<f64>::zeros(n);
    let mut z = DVector::<f64>::zeros(dim);
    for t in 0..e.len() {
        let et = e.at(t);
        integral += &et;
        deriv = &deriv * probe.pole() + (&et - &prev) / (tau_d + ts);
        prev.copy_from(&et);
        z.rows_mut(0, n).copy_from(&et);
        z.rows_mut(n, n).copy_from(&(&integral * ts));
        z.rows_mut(2 * n, n).copy_from(&deriv);
        r.ger(1.0, &z, &z, 1.0);
        p.ger(1.0, &z, &u.at(t), 1.0);
    }
    let scale = 1.0 / e.len() as f64;
    r *= scale;
    p *= scale;
    // the ridge acts on unit-normalized columns, whose trace over count is one
    let lambda = opts.ridge.unwrap_or(1e-8);
    if !(lambda >= 0.0) {
        return Err(invalid("ridge must be nonnegative"));
    }
    for i in 0..dim {
        let d = r[(i, i)];
        r[(i, i)] += lambda * if d > 0.0 { d } else { 1.0 };
    }
    let chol = r.clone().cholesky().ok_or(Error::Singular("PID normal matrix"))?;
    // rows of W = [Kp Ki Kd] solve R w_i = p_i
    let mut w = chol.solve(&p).transpose();
    if passive {
        w = passive_pid_fit(&r, &p, w, n);
    }
    let block = |b: usize| w.view((0, b * n), (n, n)).into_owned();
    PidParams::new(block(0), block(1), block(2), tau_d, ts)
}

fn project_blocks(w: &mut DMatrix<f64>, n: usize) {
    for b in 0..3 {
        let s = sym(&w.view((0, b * n), (n, n)).into_owned());
        let eig = SymmetricEigen::new(s);
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let proj = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        w.view_mut((0, b * n), (n, n)).copy_from(&sym(&proj));
    }
}

/// Accelerated projected gradient on `tr(W R W^T) - 2 tr(W P)` with each
/// gain block scaled to unit curvature.
fn passive_pid_fit(r: &DMatrix<f64>, p: &DMatrix<f64>, start: DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let dim = 3 * n;
    let mut s = DVector::<f64>::zeros(dim);
    for b in 0..3 {
        let mean = (0..n).map(|i| r[(b * n + i, b * n + i)]).sum::<f64>() / n as f64;
        let v = if mean > 0.0 { 1.0 / mean.sqrt() } else { 1.0 };
        s.rows_mut(b * n, n).fill(v);
    }
    let sd = DMatrix::from_diagonal(&s);
    let rs = &sd * r * &sd;
    let ps = &sd * p;
    let lip = 2.0 * SymmetricEigen::new(rs.clone()).eigenvalues.max().max(1e-300);
    let step = 1.0 / lip;
    let unscale = |v: &DMatrix<f64>| v * &sd;
    let mut v = DMatrix::from_fn(n, dim, |i, j| start[(i, j)] / s[j]);
    project_blocks(&mut v, n);
    let mut y = v.clone();
    let mut tk: f64 = 1.0;
    for _ in 0..20_000 {
        let grad = (&y * &rs - ps.transpose()) * 2.0;
        let mut next = &y - grad * step;
        project_blocks(&mut next, n);
        let change = (&next - &v).norm();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = &next + (&next - &v) * ((tk - 1.0) / t_next);
        v = next;
        tk = t_next;
        if change <= 1e-13 * v.norm().max(1.0) {
            break;
        }
    }
    unscale(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifir::eval_ifir;
    use crate::lti::first_order_ref;
    use crate::signals::nrmse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(ts: f64, n: usize, ch: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::from_fn(ts, n, ch, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn unity_reference_gives_zero_error() {
        let y = noise(0.01, 50, 1, 1);
        let e = virtual_error(&y, &ContinuousTf::static_gain(1.0), &InverseConfig::default()).unwrap();
        assert!(e.max_abs() < 1e-15);
        let half = virtual_error(&y, &ContinuousTf::static_gain(0.5), &InverseConfig::default()).unwrap();
        for k in 0..50 {
            assert!((half.get(k, 0) - y.get(k, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn virtual_error_tracks_true_reference() {
        let ts = 0.001;
        let mr = first_order_ref(0.05).unwrap();
        let r = Signal::from_fn(ts, 20_000, 1, |k, _| {
            let t = k as f64 * ts;
            (2.0 * t).sin() + 0.5 * (5.0 * t + 1.0).sin()
        })
        .unwrap();
        let y = simulate_lti(&mr.discretize(ts, Discretization::Tustin).unwrap(), &r, None).unwrap();
        let cfg = InverseConfig {
            pole_scale: 1000.0,
            method: Discretization::Tustin,
        };
        let e = virtual_error(&y, &mr, &cfg).unwrap();
        let truth = Signal::new(ts, r.samples() - y.samples()).unwrap();
        assert!(nrmse(&e, &truth).unwrap() <= 0.02);
    }

    #[test]
    fn exact_inverse_recovers_reference() {
        let ts = 0.005;
        let (a, b) = (0.9, 0.1);
        let r = noise(ts, 300, 2, 3);
        let mr = DiscreteSs::from_coeffs(vec![b], vec![1.0, -a], ts).unwrap();
        let y = {
            let ys: Vec<Signal> = (0..2)
                .map(|c| {
                    let rc = Signal::from_channels(ts, &[r.channel(c)]).unwrap();
                    simulate_lti(&mr, &rc, None).unwrap()
                })
                .collect();
            Signal::from_channels(ts, &[ys[0].channel(0), ys[1].channel(0)]).unwrap()
        };
        let e = virtual_error_exact(&y, &[b], &[1.0, -a]).unwrap();
        assert_eq!(e.len(), 299);
        for t in 0..299 {
            for c in 0..2 {
                assert!((e.get(t, c) - (r.get(t, c) - y.get(t, c))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn column_layout() {
        let e = noise(0.005, 400, 3, 4);
        let reg = build_regression(&e, &e, 200).unwrap();
        assert_eq!(reg.n_params(), 1806);
        assert_eq!(reg.columns()[0], Column::Tap { k: 0, i: 0, j: 0 });
        assert_eq!(reg.columns()[1805], Column::Gamma { i: 2, j: 2 });
        let siso = build_regression_with(
            &noise(0.01, 10, 1, 5),
            &noise(0.01, 10, 1, 6),
            1,
            &RegressionOptions {
                include_gamma: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(siso.phi().column(0).into_owned(), DVector::from(siso.error_signal().channel(0)));
        assert!(build_regression(&e.slice(0, 5).unwrap(), &e.slice(0, 5).unwrap(), 5).is_err());
    }

    #[test]
    fn normal_equations_match_dense_regressor() {
        for (history, ch, m) in [(History::ZeroPad, 2, 4), (History::Discard, 2, 4), (History::ZeroPad, 1, 7)] {
            let e = noise(0.01, 60, ch, 7);
            let u = noise(0.01, 60, ch, 8);
            let reg = build_regression_with(
                &e,
                &u,
                m,
                &RegressionOptions {
                    history,
                    ..Default::default()
                },
            )
            .unwrap();
            let phi = reg.phi();
            let y = reg.target();
            let ns = reg.samples() as f64;
            let obj = reg.objective();
            let q = phi.transpose() * &phi / ns;
            let c = phi.transpose() * &y / ns;
            assert!((&obj.q - &q).amax() < 1e-12, "{history:?}");
            assert!((&obj.c - &c).amax() < 1e-12);
            assert!((obj.u0 - y.norm_squared() / ns).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_generating_controller() {
        let ts = 0.005;
        let truth = IfirParams::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.1, 0.8]),
                DMatrix::from_row_slice(2, 2, &[-0.3, 0.05, 0.1, -0.2]),
                DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.02, 0.05]),
            ],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            ts,
        )
        .unwrap();
        let e = noise(ts, 2000, 2, 9);
        let u = eval_ifir(&truth, &e).unwrap();
        let reg = build_regression(&e, &u, 3).unwrap();
        let fit = fit_unconstrained(&reg, Some(0.0)).unwrap();
        let x0 = reg.pack(&truth).unwrap();
        assert!((&fit.x - &x0).amax() < 1e-6);
        assert!(fit.objective < 1e-12);
        let recon = eval_ifir(&fit.params, &e).unwrap();
        let phix = reg.phi() * &fit.x;
        for t in 0..e.len() {
            for c in 0..2 {
                assert!((recon.get(t, c) - phix[t * 2 + c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn proportional_data_and_zero_target() {
        let e = noise(0.01, 100, 1, 10);
        let reg = build_regression_with(
            &e,
            &e.scaled(2.0),
            1,
            &RegressionOptions {
                include_gamma: false,
                ..Default::default()
            },
        )
        .unwrap();
        let fit = fit_unconstrained(&reg, Some(0.0)).unwrap();
        assert!((fit.params.taps[0][(0, 0)] - 2.0).abs() < 1e-12);
        let zero = Signal::zeros(0.01, 100, 1).unwrap();
        let reg = build_regression(&e, &zero, 4).unwrap();
        let fit = fit_unconstrained(&reg, Some(1e-6)).unwrap();
        assert!(fit.x.amax() == 0.0);
    }

    #[test]
    fn rank_deficiency_without_ridge_is_an_error() {
        let e = Signal::zeros(0.01, 50, 1).unwrap();
        let reg = build_regression(&e, &e, 3).unwrap();
        assert!(matches!(fit_unconstrained(&reg, Some(0.0)), Err(Error::Singular(_))));
    }

    #[test]
    fn fitted_objective_is_locally_optimal() {
        let e = noise(0.01, 300, 1, 11);
        let u = noise(0.01, 300, 1, 12);
        let reg = build_regression(&e, &u, 5).unwrap();
        let obj = reg.objective();
        let fit = fit_objective(&reg, &obj, Some(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let dx = DVector::from_fn(fit.x.len(), |_, _| rng.random_range(-1e-3..1e-3));
            assert!(obj.value(&(&fit.x + dx)) >= fit.objective);
        }
    }

    #[test]
    fn pid_examples() {
        let ts = 0.001;
        let e = noise(ts, 3000, 1, 14);
        let p = fit_pid(&e, &e.scaled(3.0), false).unwrap();
        assert!((p.kp[(0, 0)] - 3.0).abs() < 1e-6);
        assert!(p.ki[(0, 0)].abs() < 1e-6 && p.kd[(0, 0)].abs() < 1e-6, "{p:?}");

        let truth = PidParams::siso(2.0, 0.5, 0.0, 2.0 * ts, ts).unwrap();
        let u = eval_pid(&truth, &e).unwrap();
        let p = fit_pid(&e, &u, true).unwrap();
        assert!((p.kp[(0, 0)] - 2.0).abs() < 1e-3);
        assert!((p.ki[(0, 0)] - 0.5).abs() < 1e-3);
        assert!(p.kd[(0, 0)].abs() < 1e-3);
    }

    #[test]
    fn passive_pid_gains_are_psd() {
        let ts = 0.005;
        let e = noise(ts, 1500, 2, 15);
        let neg = PidParams::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.4]),
            DMatrix::from_row_slice(2, 2, &[0.01, 0.02, -0.03, 0.01]),
            2.0 * ts,
            ts,
        )
        .unwrap();
        let u = eval_pid(&neg, &e).unwrap();
        let p = fit_pid(&e, &u, true).unwrap();
        let (lo, asym) = p.gain_margins();
        assert!(lo >= -1e-9 && asym < 1e-12);
        let free = fit_pid(&e, &u, false).unwrap();
        assert!((&free.kp - &neg.kp).amax() < 1e-6, "{free:?}");
    }

    #[test]
    fn pid_json_shape() {
        let p = PidParams::siso(1.0, 2.0, 3.0, 0.002, 0.001).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["kp"], serde_json::json!([[1.0]]));
        assert_eq!(v["tau_d"], serde_json::json!(0.002));
        let back: PidParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
