//! Multi-rate feedback loop: the plant advances at the fast rate while the
//! controller runs at the slow rate through a zero-order hold. Also reference
//! profiles, Bode sweeps and tracking metrics.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ifir::{IfirParams, IfirState};
use crate::lti::{simulate_lti, ContinuousTf, DiscreteSs, Discretization};
use crate::signals::{dft_gain_phase_with, improvement, BodePoint, DftOptions, Signal};
use crate::vrft::{PidParams, PidState};

/// Feedback controller run at the slow rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Controller {
    Ifir(IfirParams),
    Pid(PidParams),
    Zero { channels: usize, ts: f64 },
}

impl Controller {
    pub fn channels(&self) -> usize {
        match self {
            Controller::Ifir(p) => p.channels(),
            Controller::Pid(p) => p.channels(),
            Controller::Zero { channels, .. } => *channels,
        }
    }

    pub fn sample_period(&self) -> f64 {
        match self {
            Controller::Ifir(p) => p.ts,
            Controller::Pid(p) => p.ts,
            Controller::Zero { ts, .. } => *ts,
        }
    }

    pub fn feedthrough(&self) -> DMatrix<f64> {
        match self {
            Controller::Ifir(p) => p.feedthrough(),
            Controller::Pid(p) => p.feedthrough(),
            Controller::Zero { channels, .. } => DMatrix::zeros(*channels, *channels),
        }
    }

    fn state(&self) -> ControllerState<'_> {
        match self {
            Controller::Ifir(p) => ControllerState::Ifir(p.state()),
            Controller::Pid(p) => ControllerState::Pid(p.state()),
            Controller::Zero { channels, .. } => ControllerState::Zero(*channels),
        }
    }
}

#[derive(Debug, Clone)]
enum ControllerState<'a> {
    Ifir(IfirState<'a>),
    Pid(PidState<'a>),
    Zero(usize),
}

impl ControllerState<'_> {
    fn step(&mut self, e: &DVector<f64>) -> DVector<f64> {
        match self {
            ControllerState::Ifir(s) => s.step(e),
            ControllerState::Pid(s) => s.step(e),
            ControllerState::Zero(n) => DVector::zeros(*n),
        }
    }

    /// Output for a zero error at the next step, leaving the state untouched.
    fn free_response(&self, channels: usize) -> DVector<f64> {
        self.clone().step(&DVector::zeros(channels))
    }
}

/// Time range used for NRMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalWindow {
    pub start_s: f64,
    pub end_s: Option<f64>,
}

impl EvalWindow {
    /// Sample range `[start, end)` of a record with `len` samples.
    pub fn range(&self, ts: f64, len: usize) -> Result<(usize, usize)> {
        if !(self.start_s >= 0.0) {
            return Err(invalid("window start must be >= 0"));
        }
        let start = ((self.start_s / ts) - 1e-9).ceil().max(0.0) as usize;
        let end = match self.end_s {
            Some(e) if !(e > self.start_s) => return Err(invalid("window end must exceed its start")),
            Some(e) => (((e / ts) + 1e-9).floor() as usize + 1).min(len),
            None => len,
        };
        if start >= end {
            return Err(invalid(format!("window [{}, {:?}] holds no samples", self.start_s, self.end_s)));
        }
        Ok((start, end))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub plant_rate_hz: f64,
    pub controller_rate_hz: f64,
    /// Default scenario length.
    pub duration_s: f64,
    pub measurement_noise_sigma: f64,
    pub noise_seed: u64,
    /// Controller output takes effect one fast tick after the measurement.
    pub compute_delay: bool,
    /// Divergence when `|y| > factor * max|y*|` after the grace period.
    pub divergence_factor: f64,
    pub grace_samples: usize,
    /// Optional absolute bound on `|y|`.
    pub velocity_bound: Option<f64>,
    pub window: EvalWindow,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            plant_rate_hz: 1000.0,
            controller_rate_hz: 200.0,
            duration_s: 10.0,
            measurement_noise_sigma: 0.0,
            noise_seed: 0,
            compute_delay: true,
            divergence_factor: 10.0,
            grace_samples: 50,
            velocity_bound: None,
            window: EvalWindow::default(),
        }
    }
}

impl LoopConfig {
    /// Equal plant and controller rates.
    pub fn single_rate(rate_hz: f64) -> Self {
        Self {
            plant_rate_hz: rate_hz,
            controller_rate_hz: rate_hz,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hold_factor()?;
        if !(self.duration_s > 0.0) {
            return Err(invalid("loop duration must be positive"));
        }
        if !(self.measurement_noise_sigma >= 0.0) {
            return Err(invalid("measurement noise sigma must be >= 0"));
        }
        if !(self.divergence_factor > 0.0) {
            return Err(invalid("divergence factor must be positive"));
        }
        if let Some(b) = self.velocity_bound {
            if !(b > 0.0) {
                return Err(invalid("velocity bound must be positive"));
            }
        }
        Ok(())
    }

    /// Fast steps per controller step.
    pub fn hold_factor(&self) -> Result<usize> {
        if !(self.plant_rate_hz > 0.0 && self.controller_rate_hz > 0.0) {
            return Err(invalid("loop rates must be positive"));
        }
        let ratio = self.plant_rate_hz / self.controller_rate_hz;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(invalid(format!(
                "plant rate {} Hz is not an integer multiple of controller rate {} Hz",
                self.plant_rate_hz, self.controller_rate_hz
            )));
        }
        Ok(k as usize)
    }

    pub fn plant_ts(&self) -> f64 {
        1.0 / self.plant_rate_hz
    }

    pub fn controller_ts(&self) -> f64 {
        1.0 / self.controller_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub r: Signal,
    pub y_star: Signal,
    pub y: Signal,
    pub u: Signal,
    /// `None` when the run diverged.
    pub nrmse: Option<f64>,
    pub diverged: bool,
    pub diverged_at_s: Option<f64>,
    /// `sum e^T u Ts` over controller steps, final and running minimum.
    pub supply: f64,
    pub min_supply: f64,
    pub bode_points: Vec<BodePoint>,
    pub window: EvalWindow,
    pub hold_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub nrmse: Option<f64>,
    pub diverged: bool,
    pub diverged_at_s: Option<f64>,
    pub supply: f64,
    pub min_supply: f64,
    pub window: EvalWindow,
    pub hold_factor: usize,
    pub samples: usize,
    pub sample_period_s: f64,
}

impl TrackingResult {
    pub fn metrics(&self) -> LoopMetrics {
        LoopMetrics {
            nrmse: self.nrmse,
            diverged: self.diverged,
            diverged_at_s: self.diverged_at_s,
            supply: self.supply,
            min_supply: self.min_supply,
            window: self.window,
            hold_factor: self.hold_factor,
            samples: self.y.len(),
            sample_period_s: self.y.sample_period(),
        }
    }

    /// Writes `signals.csv`, `metrics.json` and `bode.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let n = self.r.channels();
        let groups = [("r", &self.r), ("y_star", &self.y_star), ("y", &self.y), ("u", &self.u)];
        let mut names = Vec::new();
        let mut data = DMatrix::zeros(self.r.len(), 4 * n);
        for (g, (name, s)) in groups.iter().enumerate() {
            for c in 0..n {
                names.push(format!("{name}_{c}"));
            }
            data.columns_mut(g * n, n).copy_from(s.samples());
        }
        Signal::new(self.r.sample_period(), data)?.save_csv(&dir.join("signals.csv"), &names)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&self.metrics())?)?;
        let mut w = csv::Writer::from_path(dir.join("bode.csv"))?;
        if self.bode_points.is_empty() {
            w.write_record(["omega_rad_s", "input_channel", "output_channel", "gain", "phase_rad", "diverged"])?;
        }
        for p in &self.bode_points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Missing(dir.to_path_buf()));
        }
        let metrics_path = dir.join("metrics.json");
        if !metrics_path.exists() {
            return Err(Error::Missing(metrics_path));
        }
        let metrics: LoopMetrics = serde_json::from_str(&fs::read_to_string(metrics_path)?)?;
        let (all, names) = Signal::load_csv(&dir.join("signals.csv"))?;
        if names.len() % 4 != 0 {
            return Err(Error::Config("signals.csv must hold r, y_star, y and u groups".into()));
        }
        let n = names.len() / 4;
        let group = |g: usize| Signal::new(all.sample_period(), all.samples().columns(g * n, n).into_owned());
        let bode_path = dir.join("bode.csv");
        let bode_points = if bode_path.exists() {
            csv::Reader::from_path(bode_path)?
                .deserialize()
                .collect::<std::result::Result<Vec<BodePoint>, _>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            r: group(0)?,
            y_star: group(1)?,
            y: group(2)?,
            u: group(3)?,
            nrmse: metrics.nrmse,
            diverged: metrics.diverged,
            diverged_at_s: metrics.diverged_at_s,
            supply: metrics.supply,
            min_supply: metrics.min_supply,
            bode_points,
            window: metrics.window,
            hold_factor: metrics.hold_factor,
        })
    }
}

fn check_period(what: f64, expected: f64) -> Result<()> {
    if (what - expected).abs() > 1e-9 * expected {
        return Err(Error::RateMismatch(expected, what));
    }
    Ok(())
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { what, expected, actual });
    }
    Ok(())
}

/// Reference model sampled at the plant rate.
pub fn reference_response(reference_model: &ContinuousTf, r: &Signal) -> Result<Signal> {
    let mr = reference_model.discretize(r.sample_period(), Discretization::Zoh)?;
    simulate_lti(&mr, r, None)
}

/// Closed-loop simulation from rest. `r` is sampled at the plant rate.
pub fn simulate_loop(
    plant: &DiscreteSs,
    controller: &Controller,
    r: &Signal,
    reference_model: &ContinuousTf,
    cfg: &LoopConfig,
) -> Result<TrackingResult> {
    cfg.validate()?;
    let hold = cfg.hold_factor()?;
    check_period(plant.ts, cfg.plant_ts())?;
    check_period(r.sample_period(), cfg.plant_ts())?;
    check_period(controller.sample_period(), cfg.controller_ts())?;
    let n = controller.channels();
    let (outs, ins) = plant.dims();
    check_dim("plant inputs", n, ins)?;
    check_dim("plant outputs", n, outs)?;
    check_dim("reference channels", n, r.channels())?;
    check_dim("reference model outputs", n, reference_model.dims().0)?;

    let y_star = reference_response(reference_model, r)?;
    let mut bound = cfg.divergence_factor * y_star.max_abs();
    if bound == 0.0 {
        bound = f64::INFINITY;
    }
    if let Some(b) = cfg.velocity_bound {
        bound = bound.min(b);
    }
    let noise = if cfg.measurement_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.measurement_noise_sigma).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let has_feedthrough = plant.d.iter().any(|v| *v != 0.0);
    let solve_loop = !cfg.compute_delay && has_feedthrough;
    let k0 = controller.feedthrough();
    let loop_matrix = if solve_loop {
        let m = DMatrix::<f64>::identity(n, n) + &plant.d * &k0;
        Some(m.lu())
    } else {
        None
    };
    let tc = cfg.controller_ts();

    let len = r.len();
    let mut state = controller.state();
    let mut x = DVector::zeros(plant.order());
    let mut u = DVector::zeros(n);
    let mut pending: Option<DVector<f64>> = None;
    let mut y_rec = DMatrix::zeros(len, n);
    let mut u_rec = DMatrix::zeros(len, n);
    let (mut supply, mut min_supply) = (0.0f64, 0.0f64);
    let mut stop = len;
    let mut diverged_at = None;
    for k in 0..len {
        if let Some(p) = pending.take() {
            u = p;
        }
        let rk = r.at(k);
        let mut y = &plant.c * &x + &plant.d * &u;
        if k % hold == 0 {
            let nu = match &noise {
                Some(d) => DVector::from_fn(n, |_, _| d.sample(&mut rng)),
                None => DVector::zeros(n),
            };
            let e = if let Some(lu) = &loop_matrix {
                let w = state.free_response(n);
                let rhs = &plant.c * &x + &plant.d * (&w + &k0 * (&rk - &nu));
                let y_now = lu.solve(&rhs).ok_or(Error::Singular("algebraic loop I + D K0"))?;
                &rk - y_now - &nu
            } else {
                &rk - &y - &nu
            };
            let out = state.step(&e);
            supply += e.dot(&out) * tc;
            min_supply = min_supply.min(supply);
            if cfg.compute_delay {
                pending = Some(out);
            } else {
                u = out;
                y = &plant.c * &x + &plant.d * &u;
            }
        }
        y_rec.row_mut(k).copy_from(&y.transpose());
        u_rec.row_mut(k).copy_from(&u.transpose());
        let peak = y.amax();
        if !peak.is_finite() || (k >= cfg.grace_samples && peak > bound) {
            stop = k + 1;
            diverged_at = Some(r.time(k));
            break;
        }
        x = &plant.a * &x + &plant.b * &u;
    }
    let diverged = diverged_at.is_some();
    let ts = r.sample_period();
    let finite = |m: DMatrix<f64>| m.map(|v| if v.is_finite() { v } else { f64::MAX.copysign(v) });
    let cut = |s: DMatrix<f64>| Signal::new(ts, finite(s.rows(0, stop).into_owned()));
    let result = TrackingResult {
        r: cut(r.samples().clone())?,
        y_star: cut(y_star.samples().clone())?,
        y: cut(y_rec)?,
        u: cut(u_rec)?,
        nrmse: None,
        diverged,
        diverged_at_s: diverged_at,
        supply,
        min_supply,
        bode_points: Vec::new(),
        window: cfg.window,
        hold_factor: hold,
    };
    let nrmse = if diverged {
        None
    } else {
        Some(window_nrmse(&result.y, &result.y_star, &cfg.window)?)
    };
    Ok(TrackingResult { nrmse, ..result })
}

/// NRMSE restricted to `window`.
pub fn window_nrmse(y: &Signal, y_star: &Signal, window: &EvalWindow) -> Result<f64> {
    let (a, b) = window.range(y.sample_period(), y.len().min(y_star.len()))?;
    crate::signals::nrmse(&y.slice(a, b)?, &y_star.slice(a, b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nrmse: Option<f64>,
    pub baseline_nrmse: Option<f64>,
    /// Percent NRMSE reduction relative to the baseline.
    pub improvement_pct: Option<f64>,
    /// Set when a diverged run kept the comparison from being made.
    pub excluded_divergence: bool,
}

/// NRMSE of `result` on `window` and, given a baseline on the same reference,
/// the improvement over it.
pub fn evaluate(result: &TrackingResult, baseline: Option<&TrackingResult>, window: &EvalWindow) -> Result<Evaluation> {
    let score = |t: &TrackingResult| -> Result<Option<f64>> {
        if t.diverged {
            Ok(None)
        } else {
            window_nrmse(&t.y, &t.y_star, window).map(Some)
        }
    };
    let nrmse = score(result)?;
    let Some(base) = baseline else {
        return Ok(Evaluation {
            nrmse,
            baseline_nrmse: None,
            improvement_pct: None,
            excluded_divergence: result.diverged,
        });
    };
    let common = result.r.len().min(base.r.len());
    if result.r.slice(0, common)? != base.r.slice(0, common)? {
        return Err(invalid("baseline run uses a different reference"));
    }
    let baseline_nrmse = score(base)?;
    let improvement_pct = match (nrmse, baseline_nrmse) {
        (Some(a), Some(b)) => Some(improvement(b, a)?),
        _ => None,
    };
    Ok(Evaluation {
        nrmse,
        baseline_nrmse,
        improvement_pct,
        excluded_divergence: result.diverged || base.diverged,
    })
}

fn samples_for(duration_s: f64, ts: f64) -> Result<usize> {
    if !(duration_s > 0.0 && ts > 0.0) {
        return Err(invalid("profile duration and sample period must be positive"));
    }
    Ok((duration_s / ts + 1e-9).floor() as usize + 1)
}

/// Constant `amplitude` from `t = 0`.
pub fn step_profile(amplitude: f64, duration_s: f64, ts: f64) -> Result<Signal> {
    Signal::from_fn(ts, samples_for(duration_s, ts)?, 1, |_, _| amplitude)
}

/// `amplitude sin(omega t)`.
pub fn sine_profile(amplitude: f64, omega_rad_s: f64, duration_s: f64, ts: f64) -> Result<Signal> {
    Signal::from_fn(ts, samples_for(duration_s, ts)?, 1, |k, _| amplitude * (omega_rad_s * k as f64 * ts).sin())
}

/// Ramp up to `peak` over `ramp_s`, hold for `dwell_s`, ramp down, then zero
/// until `duration_s`.
pub fn trapezoid_profile(peak: f64, ramp_s: f64, dwell_s: f64, duration_s: f64, ts: f64) -> Result<Signal> {
    if !(ramp_s > 0.0 && dwell_s >= 0.0) {
        return Err(invalid("trapezoid needs ramp > 0 and dwell >= 0"));
    }
    Signal::from_fn(ts, samples_for(duration_s, ts)?, 1, |k, _| {
        let t = k as f64 * ts;
        let up = t / ramp_s;
        let down = (2.0 * ramp_s + dwell_s - t) / ramp_s;
        peak * up.min(down).clamp(0.0, 1.0)
    })
}

/// Sum of `tones` unit cosines spaced evenly over `band_rad_s` with seeded
/// random phases, scaled to peak `amplitude`.
pub fn random_cosine_profile(
    seed: u64,
    tones: usize,
    band_rad_s: [f64; 2],
    amplitude: f64,
    duration_s: f64,
    ts: f64,
) -> Result<Signal> {
    let [lo, hi] = band_rad_s;
    if tones == 0 || !(lo > 0.0 && hi >= lo) {
        return Err(invalid("random cosine profile needs tones >= 1 and 0 < low <= high"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: Vec<(f64, f64)> = (0..tones)
        .map(|i| {
            let w = if tones == 1 { lo } else { lo + (hi - lo) * i as f64 / (tones - 1) as f64 };
            (w, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let raw = Signal::from_fn(ts, samples_for(duration_s, ts)?, 1, |k, _| {
        let t = k as f64 * ts;
        parts.iter().map(|(w, p)| (w * t + p).cos()).sum()
    })?;
    let peak = raw.max_abs();
    Ok(raw.scaled(amplitude / peak))
}

/// Spreads a single-channel profile over channels with per-channel weights.
pub fn along(profile: &Signal, direction: &[f64]) -> Result<Signal> {
    check_dim("profile channels", 1, profile.channels())?;
    Ok(Signal::from_fn(profile.sample_period(), profile.len(), direction.len(), |k, c| {
        direction[c] * profile.get(k, 0)
    })?
    .with_start_time(profile.start_time()))
}

/// Per-tone settings for [`bode_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub amplitude: f64,
    pub settle_s: f64,
    pub periods: usize,
    pub channel: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            settle_s: 3.0,
            periods: 10,
            channel: 0,
        }
    }
}

/// Closed-loop frequency response from `r` to `y` on one channel, one tone
/// per simulation. Diverged tones are flagged and the sweep continues.
pub fn bode_sweep(
    plant: &DiscreteSs,
    controller: &Controller,
    reference_model: &ContinuousTf,
    omegas_rad_s: &[f64],
    cfg: &LoopConfig,
    opts: &SweepOptions,
) -> Result<Vec<BodePoint>> {
    let n = controller.channels();
    if opts.channel >= n {
        return Err(invalid("sweep channel out of range"));
    }
    let ts = cfg.plant_ts();
    omegas_rad_s
        .par_iter()
        .map(|&w| {
            if !(w > 0.0) {
                return Err(Error::Unresolvable {
                    omega: w,
                    reason: "frequency must be positive".into(),
                });
            }
            let duration = opts.settle_s + opts.periods as f64 * 2.0 * PI / w;
            let tone = sine_profile(opts.amplitude, w, duration, ts)?;
            let mut dir = vec![0.0; n];
            dir[opts.channel] = 1.0;
            let r = along(&tone, &dir)?;
            let res = simulate_loop(plant, controller, &r, reference_model, cfg)?;
            if res.diverged {
                return Ok(BodePoint {
                    omega_rad_s: w,
                    input_channel: opts.channel,
                    output_channel: opts.channel,
                    gain: 0.0,
                    phase_rad: 0.0,
                    diverged: true,
                });
            }
            let dft = DftOptions {
                transient_fraction: opts.settle_s / duration,
                trim_to_periods: true,
                input_channel: opts.channel,
                output_channel: opts.channel,
            };
            dft_gain_phase_with(&res.r, &res.y, w, &dft)
        })
        .collect()
}
