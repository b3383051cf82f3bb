//! Experiment pipeline: configuration files, bundled presets and the probe,
//! train and evaluate steps driven by the command-line tool.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closedloop::{
    along, bode_sweep, random_cosine_profile, simulate_loop, sine_profile, step_profile, trapezoid_profile,
    Controller, LoopConfig, SweepOptions, TrackingResult,
};
use crate::error::{invalid, Error, Result};
use crate::ifir::{passivity_margin, PassivityCertificate, DENSE_GRID};
use crate::lti::{first_order_ref, second_order_ref, simulate_lti, ContinuousTf, DiscreteSs, Discretization};
use crate::plantsim::{
    coupled_cartesian_plant, flexible_joint_plant, CoupledCartesianParams, FlexibleJointParams, FlexibleMode,
};
use crate::signals::{improvement, multisine_zipped, ProbeConfig, Signal};
use crate::solver::{synthesize_passive, SolverSettings, SynthesisProblem, SynthesisReport};
use crate::vrft::{
    build_regression_with, fit_pid_with, fit_unconstrained, virtual_error, History, InverseConfig, PidFitOptions,
    PidParams, RegressionOptions,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 6] = [
    "joint_nominal",
    "joint_dynamics_change",
    "joint_aggressive",
    "cartesian_siso",
    "cartesian_mimo_mr1",
    "cartesian_mimo_mr2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantPreset {
    LongPlate,
    ShortPlate,
    Cartesian3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CustomPlant {
    FlexibleJoint(FlexibleJointParams),
    Cartesian(CoupledCartesianParams),
    TransferFunction(ContinuousTf),
    Discrete(DiscreteSs),
}

/// A named preset or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Preset(PlantPreset),
    Custom(CustomPlant),
}

impl fmt::Display for PlantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantSpec::Preset(PlantPreset::LongPlate) => f.write_str("long_plate"),
            PlantSpec::Preset(PlantPreset::ShortPlate) => f.write_str("short_plate"),
            PlantSpec::Preset(PlantPreset::Cartesian3) => f.write_str("cartesian3"),
            PlantSpec::Custom(_) => f.write_str("custom"),
        }
    }
}

impl PlantSpec {
    /// Plant sampled at `ts` with a zero-order hold on the input.
    pub fn discrete(&self, ts: f64) -> Result<DiscreteSs> {
        match self {
            PlantSpec::Preset(PlantPreset::LongPlate) => {
                flexible_joint_plant(&FlexibleJointParams::long_plate())?.discretize(ts, Discretization::Zoh)
            }
            PlantSpec::Preset(PlantPreset::ShortPlate) => {
                flexible_joint_plant(&FlexibleJointParams::short_plate())?.discretize(ts, Discretization::Zoh)
            }
            PlantSpec::Preset(PlantPreset::Cartesian3) => {
                coupled_cartesian_plant(&CoupledCartesianParams::cartesian3())?.discretize(ts, Discretization::Zoh)
            }
            PlantSpec::Custom(CustomPlant::FlexibleJoint(p)) => {
                flexible_joint_plant(p)?.discretize(ts, Discretization::Zoh)
            }
            PlantSpec::Custom(CustomPlant::Cartesian(p)) => {
                coupled_cartesian_plant(p)?.discretize(ts, Discretization::Zoh)
            }
            PlantSpec::Custom(CustomPlant::TransferFunction(tf)) => tf.discretize(ts, Discretization::Zoh),
            PlantSpec::Custom(CustomPlant::Discrete(d)) => {
                if (d.ts - ts).abs() > 1e-9 * ts {
                    return Err(Error::Config(format!(
                        "discrete plant sampled at {} s but the loop runs at {ts} s",
                        d.ts
                    )));
                }
                Ok(d.clone())
            }
        }
    }
}

/// Reference model shared by every channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    FirstOrder { tau_s: f64 },
    SecondOrder { omega_n: f64, zeta: f64 },
}

impl ReferenceSpec {
    pub fn model(&self, channels: usize) -> Result<ContinuousTf> {
        let siso = match *self {
            ReferenceSpec::FirstOrder { tau_s } => first_order_ref(tau_s)?,
            ReferenceSpec::SecondOrder { omega_n, zeta } => second_order_ref(omega_n, zeta)?,
        };
        ContinuousTf::diagonal(&siso, channels)
    }
}

/// Velocity PI used for closed-loop probing; equivalent to position PD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFeedback {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    pub duration_s: f64,
    /// Tones per channel.
    pub num_tones: usize,
    pub freq_range_rad_s: [f64; 2],
    pub amplitude: f64,
    /// Update period of the excitation, held at the plant rate.
    pub sample_period_s: f64,
    pub randomize_amplitudes: bool,
    pub noise_sigma: f64,
    /// When set, the multisine is a velocity reference tracked in closed loop.
    pub feedback: Option<ProbeFeedback>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            duration_s: 180.0,
            num_tones: 10,
            freq_range_rad_s: [1.0, 10.0],
            amplitude: 1.0,
            sample_period_s: 0.005,
            randomize_amplitudes: false,
            noise_sigma: 0.0,
            feedback: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    IfirPassive,
    IfirUnconstrained,
    Pid,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::IfirPassive => "ifir_passive",
            Variant::IfirUnconstrained => "ifir_unconstrained",
            Variant::Pid => "pid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub variants: Vec<Variant>,
    /// Full MIMO controllers, or one SISO controller per channel.
    pub structure: Structure,
    pub ifir_order: usize,
    pub ifir_rate_hz: f64,
    pub pid_rate_hz: f64,
    pub inverse: InverseConfig,
    pub history: History,
    pub solver: SolverSettings,
    /// Ridge of the unconstrained fit; the regression default when absent.
    pub unconstrained_ridge: Option<f64>,
    pub pid: PidFitOptions,
    pub pid_passive: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            variants: vec![Variant::IfirPassive, Variant::Pid],
            structure: Structure::Full,
            ifir_order: 500,
            ifir_rate_hz: 200.0,
            pid_rate_hz: 1000.0,
            inverse: InverseConfig::default(),
            history: History::ZeroPad,
            solver: SolverSettings::default(),
            unconstrained_ridge: None,
            pid: PidFitOptions::default(),
            pid_passive: true,
        }
    }
}

/// One evaluation case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Step {
        name: String,
        amplitude: f64,
        duration_s: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    Sine {
        name: String,
        amplitude: f64,
        omega_rad_s: f64,
        duration_s: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    Trapezoid {
        name: String,
        peak: f64,
        ramp_s: f64,
        dwell_s: f64,
        duration_s: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    RandomCosine {
        name: String,
        tones: usize,
        band_rad_s: [f64; 2],
        amplitude: f64,
        duration_s: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    BodeSweep {
        name: String,
        omegas_rad_s: Vec<f64>,
        amplitude: f64,
        #[serde(default = "default_settle")]
        settle_s: f64,
        #[serde(default = "default_periods")]
        periods: usize,
        #[serde(default)]
        channel: usize,
    },
    /// Runs the nested scenarios on another plant with the same controllers.
    DynamicsChange {
        name: String,
        plant: PlantSpec,
        scenarios: Vec<Scenario>,
    },
    /// Probes and retrains on another plant, then runs the nested scenarios.
    Retrain {
        name: String,
        plant: PlantSpec,
        scenarios: Vec<Scenario>,
    },
}

fn default_settle() -> f64 {
    3.0
}

fn default_periods() -> usize {
    10
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::Step { name, .. }
            | Scenario::Sine { name, .. }
            | Scenario::Trapezoid { name, .. }
            | Scenario::RandomCosine { name, .. }
            | Scenario::BodeSweep { name, .. }
            | Scenario::DynamicsChange { name, .. }
            | Scenario::Retrain { name, .. } => name,
        }
    }

    /// Reference profile at `ts` for time-domain scenarios.
    fn profile(&self, channels: usize, ts: f64, seed: u64) -> Result<Option<Signal>> {
        let (base, direction) = match self {
            Scenario::Step { amplitude, duration_s, direction, .. } => {
                (step_profile(*amplitude, *duration_s, ts)?, direction)
            }
            Scenario::Sine { amplitude, omega_rad_s, duration_s, direction, .. } => {
                (sine_profile(*amplitude, *omega_rad_s, *duration_s, ts)?, direction)
            }
            Scenario::Trapezoid { peak, ramp_s, dwell_s, duration_s, direction, .. } => {
                (trapezoid_profile(*peak, *ramp_s, *dwell_s, *duration_s, ts)?, direction)
            }
            Scenario::RandomCosine { tones, band_rad_s, amplitude, duration_s, seed: own, direction, .. } => (
                random_cosine_profile(own.unwrap_or(seed), *tones, *band_rad_s, *amplitude, *duration_s, ts)?,
                direction,
            ),
            _ => return Ok(None),
        };
        let dir = match direction {
            Some(d) if d.len() != channels => {
                return Err(Error::Config(format!(
                    "scenario {} has a {}-entry direction for a {channels}-channel plant",
                    self.name(),
                    d.len()
                )))
            }
            Some(d) => d.clone(),
            None => vec![1.0; channels],
        };
        Ok(Some(along(&base, &dir)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub plant: PlantSpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopConfig,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Probe data used by `train` instead of `<out>/probe.csv`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Controller files used by `evaluate` instead of `<out>/controllers`.
    #[serde(default)]
    pub controllers: Vec<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.out.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.data.as_mut() {
            resolve(p);
        }
        cfg.controllers.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match value.get("schema").and_then(|s| s.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::Config(format!("unsupported schema {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::Config("missing numeric `schema` field".into())),
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.loop_cfg.validate().map_err(wrap)?;
        self.train.solver.validate().map_err(wrap)?;
        if self.train.ifir_order == 0 {
            return Err(Error::Config("ifir_order must be >= 1".into()));
        }
        for rate in [self.train.ifir_rate_hz, self.train.pid_rate_hz] {
            rate_factor(self.loop_cfg.plant_rate_hz, rate)?;
        }
        if !(self.probe.duration_s > 0.0) {
            return Err(Error::Config("probe duration must be positive".into()));
        }
        rate_factor(self.loop_cfg.plant_rate_hz, 1.0 / self.probe.sample_period_s)?;
        if !(self.probe.noise_sigma >= 0.0) {
            return Err(Error::Config("probe noise sigma must be >= 0".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.scenarios {
            check_scenario(s, &mut seen, true)?;
        }
        Ok(())
    }

    pub fn channels(&self) -> Result<usize> {
        Ok(self.plant.discrete(self.loop_cfg.plant_ts())?.dims().0)
    }

    pub fn reference_model(&self) -> Result<ContinuousTf> {
        self.reference.model(self.channels()?)
    }

    fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            num_tones: self.probe.num_tones,
            freq_range_rad_s: self.probe.freq_range_rad_s,
            amplitudes: vec![self.probe.amplitude],
            duration_s: self.probe.duration_s,
            sample_period_s: self.probe.sample_period_s,
            seed: self.seed,
            randomize_amplitudes: self.probe.randomize_amplitudes,
            ..Default::default()
        }
    }
}

fn check_scenario(s: &Scenario, seen: &mut std::collections::HashSet<String>, top: bool) -> Result<()> {
    let name = s.name();
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::Config(format!("invalid scenario name {name:?}")));
    }
    if !seen.insert(name.to_string()) {
        return Err(Error::Config(format!("duplicate scenario name {name:?}")));
    }
    match s {
        Scenario::DynamicsChange { scenarios, .. } | Scenario::Retrain { scenarios, .. } => {
            if !top {
                return Err(Error::Config(format!("scenario {name:?} cannot be nested")));
            }
            let mut inner = std::collections::HashSet::new();
            for n in scenarios {
                check_scenario(n, &mut inner, false)?;
            }
        }
        Scenario::BodeSweep { omegas_rad_s, .. } if omegas_rad_s.is_empty() => {
            return Err(Error::Config(format!("bode sweep {name:?} lists no frequencies")));
        }
        _ => {}
    }
    Ok(())
}

fn rate_factor(fast_hz: f64, slow_hz: f64) -> Result<usize> {
    let ratio = fast_hz / slow_hz;
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "plant rate {fast_hz} Hz is not an integer multiple of {slow_hz} Hz"
        )));
    }
    Ok(k as usize)
}

/// Recorded probing experiment at the plant rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub r: Signal,
    pub u: Signal,
    pub y: Signal,
}

impl ProbeData {
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.u.channels();
        let mut names = Vec::new();
        let mut data = DMatrix::zeros(self.u.len(), 3 * n);
        for (g, (name, s)) in [("r", &self.r), ("u", &self.u), ("y", &self.y)].iter().enumerate() {
            for c in 0..n {
                names.push(format!("{name}_{c}"));
            }
            data.columns_mut(g * n, n).copy_from(s.samples());
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Signal::new(self.u.sample_period(), data)?.save_csv(path, &names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let (all, names) = Signal::load_csv(path)?;
        let pick = |prefix: &str| -> Result<Signal> {
            let cols: Vec<usize> = names
                .iter()
                .enumerate()
                .filter(|(_, n)| n.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
                .map(|(i, _)| i)
                .collect();
            if cols.is_empty() {
                return Err(Error::Config(format!("{} has no {prefix}* columns", path.display())));
            }
            let data = DMatrix::from_fn(all.len(), cols.len(), |k, c| all.get(k, cols[c]));
            Signal::new(all.sample_period(), data)
        };
        let u = pick("u_")?;
        let y = pick("y_")?;
        let r = pick("r_").unwrap_or_else(|_| u.clone());
        if u.channels() != y.channels() {
            return Err(Error::Config("probe data needs as many u as y columns".into()));
        }
        Ok(Self { r, u, y })
    }
}

/// Runs the multisine experiment on `plant` (sampled at the plant rate).
pub fn run_probe(cfg: &ExperimentConfig, plant: &DiscreteSs) -> Result<ProbeData> {
    let n = plant.dims().0;
    let excitation = multisine_zipped(&cfg.probe_config(), n)?;
    let factor = rate_factor(cfg.loop_cfg.plant_rate_hz, 1.0 / cfg.probe.sample_period_s)?;
    let sigma = cfg.probe.noise_sigma;
    match cfg.probe.feedback {
        None => {
            let u = excitation.hold(factor)?;
            let clean = simulate_lti(plant, &u, None)?;
            let y = if sigma > 0.0 {
                add_noise(&clean, sigma, cfg.seed.wrapping_add(1), 1)?
            } else {
                clean
            };
            Ok(ProbeData { r: u.clone(), u, y })
        }
        Some(fb) => {
            let eye = DMatrix::<f64>::identity(n, n);
            let pi = PidParams::new(
                &eye * fb.kp,
                &eye * fb.ki,
                DMatrix::zeros(n, n),
                2.0 * cfg.probe.sample_period_s,
                cfg.probe.sample_period_s,
            )?;
            let loop_cfg = LoopConfig {
                controller_rate_hz: 1.0 / cfg.probe.sample_period_s,
                measurement_noise_sigma: sigma,
                noise_seed: cfg.seed.wrapping_add(1),
                divergence_factor: f64::INFINITY,
                velocity_bound: None,
                ..cfg.loop_cfg.clone()
            };
            let r = excitation.hold(factor)?;
            let unit = ContinuousTf::diagonal(&ContinuousTf::static_gain(1.0), n)?;
            let res = simulate_loop(plant, &Controller::Pid(pi), &r, &unit, &loop_cfg)?;
            // record the measurement the probing controller saw
            let y = if sigma > 0.0 {
                add_noise(&res.y, sigma, cfg.seed.wrapping_add(1), factor)?
            } else {
                res.y
            };
            Ok(ProbeData { r, u: res.u, y })
        }
    }
}

/// Gaussian noise drawn once every `hold` samples and held in between.
fn add_noise(s: &Signal, sigma: f64, seed: u64, hold: usize) -> Result<Signal> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut data = s.samples().clone();
    let mut draw = vec![0.0; s.channels()];
    for k in 0..s.len() {
        if k % hold == 0 {
            draw.iter_mut().for_each(|d| *d = normal.sample(&mut rng));
        }
        for (c, d) in draw.iter().enumerate() {
            data[(k, c)] += d;
        }
    }
    Signal::new(s.sample_period(), data)
}

/// Controller file: the controller fields, its variant and, for iFIR
/// controllers, the passivity certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    pub name: String,
    pub variant: Variant,
    #[serde(flatten)]
    pub controller: Controller,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<PassivityCertificate>,
}

impl ControllerFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads a controller file; bare PID files `{kp, ki, kd, tau_d, ts}` are
    /// accepted too.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("controller").to_string();
        if let Ok(file) = serde_json::from_str::<ControllerFile>(&text) {
            return Ok(file);
        }
        if let Ok(pid) = serde_json::from_str::<PidParams>(&text) {
            pid.validate()?;
            return Ok(Self {
                name: stem,
                variant: Variant::Pid,
                controller: Controller::Pid(pid),
                certificate: None,
            });
        }
        serde_json::from_str::<ControllerFile>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// True only when the embedded certificate says passive and a fresh
    /// dense-grid check agrees.
    pub fn certified_passive(&self) -> Result<bool> {
        let (Some(cert), Controller::Ifir(params)) = (&self.certificate, &self.controller) else {
            return Ok(false);
        };
        if !cert.verdict {
            return Ok(false);
        }
        Ok(passivity_margin(params, DENSE_GRID)?.verdict)
    }
}

/// Outcome of training one variant.
#[derive(Debug, Clone)]
pub struct Trained {
    pub file: ControllerFile,
    /// One report per constrained solve; one per channel for diagonal
    /// controllers.
    pub synthesis: Vec<SynthesisReport>,
    pub wall_time_s: f64,
}

fn training_data(data: &ProbeData, rate_hz: f64, plant_rate_hz: f64) -> Result<(Signal, Signal)> {
    let factor = rate_factor(plant_rate_hz, rate_hz)?;
    let period = data.u.sample_period();
    if (period - 1.0 / plant_rate_hz).abs() > 1e-9 * period {
        return Err(Error::Config(format!(
            "probe data sampled at {period} s but the plant rate is {plant_rate_hz} Hz"
        )));
    }
    Ok((data.u.decimate(factor)?, data.y.decimate(factor)?))
}

/// Fits one controller variant from probe data.
pub fn train_variant(cfg: &ExperimentConfig, data: &ProbeData, variant: Variant) -> Result<Trained> {
    let start = Instant::now();
    let n = data.u.channels();
    let (controller, certificate, synthesis) = if cfg.train.structure == Structure::Diagonal && n > 1 {
        let mut parts = Vec::with_capacity(n);
        for c in 0..n {
            let pick = |s: &Signal| Signal::new(s.sample_period(), s.samples().columns(c, 1).into_owned());
            let axis = ProbeData {
                r: pick(&data.r)?,
                u: pick(&data.u)?,
                y: pick(&data.y)?,
            };
            parts.push(fit_variant(cfg, &axis, variant)?);
        }
        assemble_diagonal(parts)?
    } else {
        fit_variant(cfg, data, variant)?
    };
    Ok(Trained {
        file: ControllerFile {
            name: variant.name().into(),
            variant,
            controller,
            certificate,
        },
        synthesis,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

type Fit = (Controller, Option<PassivityCertificate>, Vec<SynthesisReport>);

fn fit_variant(cfg: &ExperimentConfig, data: &ProbeData, variant: Variant) -> Result<Fit> {
    let mr = cfg.reference.model(data.u.channels())?;
    let train = &cfg.train;
    let plant_rate = cfg.loop_cfg.plant_rate_hz;
    if variant == Variant::Pid {
        let (u, y) = training_data(data, train.pid_rate_hz, plant_rate)?;
        let e = virtual_error(&y, &mr, &train.inverse)?;
        let pid = fit_pid_with(&e, &u, train.pid_passive, &train.pid)?;
        return Ok((Controller::Pid(pid), None, Vec::new()));
    }
    let (u, y) = training_data(data, train.ifir_rate_hz, plant_rate)?;
    let e = virtual_error(&y, &mr, &train.inverse)?;
    let opts = RegressionOptions {
        history: train.history,
        ..Default::default()
    };
    let reg = build_regression_with(&e, &u, train.ifir_order, &opts)?;
    if variant == Variant::IfirUnconstrained {
        let fit = fit_unconstrained(&reg, train.unconstrained_ridge)?;
        let cert = passivity_margin(&fit.params, DENSE_GRID)?;
        return Ok((Controller::Ifir(fit.params), Some(cert), Vec::new()));
    }
    let problem = SynthesisProblem::from_regression(&reg, train.solver)?;
    let report = synthesize_passive(&problem)?;
    if !report.certificate.verdict {
        if !report.converged {
            return Err(Error::IterationLimit(report.iterations));
        }
        return Err(Error::NotCertified(report.certificate.dense_check_min_eig));
    }
    Ok((
        Controller::Ifir(report.params.clone()),
        Some(report.certificate.clone()),
        vec![report],
    ))
}

/// Block-diagonal controller from per-channel SISO fits.
fn assemble_diagonal(parts: Vec<Fit>) -> Result<Fit> {
    let n = parts.len();
    let diag = |vals: &[f64]| DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(vals));
    let mut synthesis = Vec::new();
    let mut constraints = None;
    let mut controllers = Vec::with_capacity(n);
    for (c, cert, reports) in parts {
        if let Some(cert) = cert.filter(|x| x.grid_size.is_some()) {
            constraints.get_or_insert(cert);
        }
        synthesis.extend(reports);
        controllers.push(c);
    }
    let controller = match &controllers[0] {
        Controller::Pid(first) => {
            let pick = |f: &dyn Fn(&PidParams) -> f64| -> Result<Vec<f64>> {
                controllers
                    .iter()
                    .map(|c| match c {
                        Controller::Pid(p) => Ok(f(p)),
                        _ => Err(invalid("mixed controller kinds")),
                    })
                    .collect()
            };
            Controller::Pid(PidParams::new(
                diag(&pick(&|p| p.kp[(0, 0)])?),
                diag(&pick(&|p| p.ki[(0, 0)])?),
                diag(&pick(&|p| p.kd[(0, 0)])?),
                first.tau_d,
                first.ts,
            )?)
        }
        Controller::Ifir(first) => {
            let siso: Vec<&crate::ifir::IfirParams> = controllers
                .iter()
                .map(|c| match c {
                    Controller::Ifir(p) => Ok(p),
                    _ => Err(invalid("mixed controller kinds")),
                })
                .collect::<Result<_>>()?;
            let taps = (0..first.order())
                .map(|k| diag(&siso.iter().map(|p| p.taps[k][(0, 0)]).collect::<Vec<_>>()))
                .collect();
            let gamma = diag(&siso.iter().map(|p| p.gamma[(0, 0)]).collect::<Vec<_>>());
            Controller::Ifir(crate::ifir::IfirParams::new(taps, gamma, first.ts)?)
        }
        Controller::Zero { .. } => return Err(invalid("cannot assemble zero controllers")),
    };
    let certificate = match &controller {
        Controller::Ifir(p) => {
            let fresh = passivity_margin(p, DENSE_GRID)?;
            Some(match constraints {
                Some(c) => fresh.with_constraints(
                    c.grid_size.unwrap_or_default(),
                    c.epsilon.unwrap_or_default(),
                    c.rho0.unwrap_or_default(),
                    c.rho.unwrap_or_default(),
                ),
                None => fresh,
            })
        }
        _ => None,
    };
    Ok((controller, certificate, synthesis))
}

/// Per-variant training record written next to the controller file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub name: String,
    pub variant: Variant,
    pub wall_time_s: f64,
    pub certified_passive: bool,
    pub certificate: Option<PassivityCertificate>,
    pub objective_value: Option<f64>,
    pub unconstrained_objective: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub max_constraint_violation: Option<f64>,
}

impl Trained {
    /// Training summary; per-channel solves are summed, or maximized for
    /// iteration counts and violations.
    pub fn record(&self) -> TrainingRecord {
        let s = &self.synthesis;
        let any = !s.is_empty();
        let sum = |f: fn(&SynthesisReport) -> f64| any.then(|| s.iter().map(f).sum());
        TrainingRecord {
            name: self.file.name.clone(),
            variant: self.file.variant,
            wall_time_s: self.wall_time_s,
            certified_passive: self.file.certificate.as_ref().is_some_and(|c| c.verdict),
            certificate: self.file.certificate.clone(),
            objective_value: sum(|r| r.objective_value),
            unconstrained_objective: sum(|r| r.unconstrained_objective),
            iterations: s.iter().map(|r| r.iterations).max(),
            converged: any.then(|| s.iter().all(|r| r.converged)),
            max_constraint_violation: s.iter().map(|r| r.max_constraint_violation).reduce(f64::max),
        }
    }

    /// Writes `<dir>/<name>.json` and `<dir>/<name>.training.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.json", self.file.name));
        self.file.save(&path)?;
        fs::write(
            dir.join(format!("{}.training.json", self.file.name)),
            serde_json::to_string_pretty(&self.record())?,
        )?;
        Ok(path)
    }
}

/// Controller loaded for evaluation.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub name: String,
    pub file: ControllerFile,
    pub certified_passive: bool,
}

impl Candidate {
    pub fn new(file: ControllerFile) -> Result<Self> {
        let certified_passive = file.certified_passive()?;
        Ok(Self {
            name: file.name.clone(),
            file,
            certified_passive,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub controller: String,
    pub variant: Variant,
    pub certified_passive: bool,
    pub nrmse: Option<f64>,
    pub diverged: bool,
    pub diverged_at_s: Option<f64>,
    /// Percent NRMSE reduction relative to the row baseline.
    pub improvement_pct: Option<f64>,
}

/// One table row: every controller on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub plant: String,
    pub baseline: Option<String>,
    pub entries: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub controller: String,
    pub variant: Variant,
    pub diverged_tones: usize,
    pub worst_gain_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub plant: String,
    pub entries: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
    pub sweeps: Vec<SweepRow>,
    pub any_diverged: bool,
}

impl Summary {
    pub fn row(&self, scenario: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }
}

impl SummaryRow {
    pub fn entry(&self, controller: &str) -> Option<&SummaryEntry> {
        self.entries.iter().find(|e| e.controller == controller)
    }
}

/// Evaluation context for one plant and controller set.
struct Bench<'a> {
    cfg: &'a ExperimentConfig,
    plant_label: String,
    plant: DiscreteSs,
    mr: ContinuousTf,
    candidates: Vec<Candidate>,
}

enum Outcome {
    Track(SummaryRow),
    Sweep(SweepRow),
}

impl Bench<'_> {
    fn loop_for(&self, c: &Candidate) -> Result<LoopConfig> {
        let rate = 1.0 / c.file.controller.sample_period();
        rate_factor(self.cfg.loop_cfg.plant_rate_hz, rate)?;
        Ok(LoopConfig {
            controller_rate_hz: rate,
            ..self.cfg.loop_cfg.clone()
        })
    }

    fn run(&self, scenario: &Scenario, key: &str, index: u64, out: &Path) -> Result<Outcome> {
        let n = self.mr.dims().0;
        let ts = self.cfg.loop_cfg.plant_ts();
        let dir = out.join("scenarios").join(key);
        if let Scenario::BodeSweep { omegas_rad_s, amplitude, settle_s, periods, channel, .. } = scenario {
            let opts = SweepOptions {
                amplitude: *amplitude,
                settle_s: *settle_s,
                periods: *periods,
                channel: *channel,
            };
            let entries = self
                .candidates
                .par_iter()
                .map(|c| -> Result<SweepEntry> {
                    let cfg = self.loop_for(c)?;
                    let points = bode_sweep(&self.plant, &c.file.controller, &self.mr, omegas_rad_s, &cfg, &opts)?;
                    write_bode(&dir.join(&c.name), &points)?;
                    let mut worst: f64 = 0.0;
                    for p in points.iter().filter(|p| !p.diverged) {
                        let target = crate::lti::FrequencyResponse::freq_response(&self.mr, p.omega_rad_s)?;
                        worst = worst.max((p.gain - target[(p.output_channel, p.input_channel)].norm()).abs());
                    }
                    Ok(SweepEntry {
                        controller: c.name.clone(),
                        variant: c.file.variant,
                        diverged_tones: points.iter().filter(|p| p.diverged).count(),
                        worst_gain_error: worst,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Outcome::Sweep(SweepRow {
                scenario: key.to_string(),
                plant: self.plant_label.clone(),
                entries,
            }));
        }
        let seed = self.cfg.seed.wrapping_add(1000 + index);
        let r = scenario
            .profile(n, ts, seed)?
            .ok_or_else(|| invalid("scenario has no reference profile"))?;
        let results = self
            .candidates
            .par_iter()
            .map(|c| -> Result<TrackingResult> {
                let cfg = LoopConfig {
                    noise_seed: seed,
                    ..self.loop_for(c)?
                };
                let res = simulate_loop(&self.plant, &c.file.controller, &r, &self.mr, &cfg)?;
                res.save(&dir.join(&c.name))?;
                Ok(res)
            })
            .collect::<Result<Vec<_>>>()?;
        let baseline = self
            .candidates
            .iter()
            .position(|c| matches!(c.file.controller, Controller::Pid(_)));
        let base_nrmse = baseline.and_then(|b| results[b].nrmse);
        let entries = self
            .candidates
            .iter()
            .zip(&results)
            .enumerate()
            .map(|(i, (c, res))| {
                let improvement_pct = match (base_nrmse, res.nrmse) {
                    (Some(b), Some(v)) if Some(i) != baseline => improvement(b, v).ok(),
                    _ => None,
                };
                SummaryEntry {
                    controller: c.name.clone(),
                    variant: c.file.variant,
                    certified_passive: c.certified_passive,
                    nrmse: res.nrmse,
                    diverged: res.diverged,
                    diverged_at_s: res.diverged_at_s,
                    improvement_pct,
                }
            })
            .collect();
        Ok(Outcome::Track(SummaryRow {
            scenario: key.to_string(),
            plant: self.plant_label.clone(),
            baseline: baseline.map(|b| self.candidates[b].name.clone()),
            entries,
        }))
    }

    fn run_all(&self, scenarios: &[(String, &Scenario)], out: &Path, summary: &mut Summary) -> Result<()> {
        for (i, (key, s)) in scenarios.iter().enumerate() {
            match self.run(s, key, i as u64, out)? {
                Outcome::Track(row) => summary.rows.push(row),
                Outcome::Sweep(row) => summary.sweeps.push(row),
            }
        }
        Ok(())
    }
}

fn write_bode(dir: &Path, points: &[crate::signals::BodePoint]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("bode.csv"))?;
    if points.is_empty() {
        w.write_record(["omega_rad_s", "input_channel", "output_channel", "gain", "phase_rad", "diverged"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Output directory layout.
pub fn probe_path(out: &Path) -> PathBuf {
    out.join("probe.csv")
}

pub fn controllers_dir(out: &Path) -> PathBuf {
    out.join("controllers")
}

/// `probe`: writes `probe.csv` and `probe.json` under `out`.
pub fn cmd_probe(cfg: &ExperimentConfig, out: &Path) -> Result<ProbeData> {
    let plant = cfg.plant.discrete(cfg.loop_cfg.plant_ts())?;
    let data = run_probe(cfg, &plant)?;
    fs::create_dir_all(out)?;
    data.save(&probe_path(out))?;
    let meta = serde_json::json!({
        "plant": cfg.plant,
        "probe": cfg.probe,
        "seed": cfg.seed,
        "plant_rate_hz": cfg.loop_cfg.plant_rate_hz,
    });
    fs::write(out.join("probe.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(data)
}

/// `train`: fits every configured variant and writes the controller files.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(PathBuf, Trained)>> {
    let data_path = cfg.data.clone().unwrap_or_else(|| probe_path(out));
    let data = ProbeData::load(&data_path)?;
    train_all(cfg, &data, &controllers_dir(out))
}

fn train_all(cfg: &ExperimentConfig, data: &ProbeData, dir: &Path) -> Result<Vec<(PathBuf, Trained)>> {
    if cfg.train.variants.is_empty() {
        return Err(Error::Config("no controller variants to train".into()));
    }
    cfg.train
        .variants
        .iter()
        .map(|v| {
            let t = train_variant(cfg, data, *v)?;
            Ok((t.save(dir)?, t))
        })
        .collect()
}

/// Controller files from `paths`, or every `*.json` controller in the
/// default directory when `paths` is empty, in name order.
pub fn load_candidates(paths: &[PathBuf], out: &Path) -> Result<Vec<Candidate>> {
    let files: Vec<PathBuf> = if paths.is_empty() {
        let dir = controllers_dir(out);
        if !dir.is_dir() {
            return Err(Error::Missing(dir));
        }
        let mut found: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.to_string_lossy().ends_with(".training.json")
            })
            .collect();
        found.sort();
        found
    } else {
        paths.to_vec()
    };
    if files.is_empty() {
        return Err(Error::Config("no controller files to evaluate".into()));
    }
    let mut out = Vec::new();
    for f in &files {
        let c = Candidate::new(ControllerFile::load(f)?)?;
        if out.iter().any(|o: &Candidate| o.name == c.name) {
            return Err(Error::Config(format!("duplicate controller name {:?}", c.name)));
        }
        out.push(c);
    }
    Ok(out)
}

/// `evaluate`: runs the scenario list and writes per-scenario results and
/// `summary.json`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, candidates: Vec<Candidate>, out: &Path) -> Result<Summary> {
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("no scenarios to evaluate".into()));
    }
    let ts = cfg.loop_cfg.plant_ts();
    let plant = cfg.plant.discrete(ts)?;
    let n = plant.dims().0;
    for c in &candidates {
        if c.file.controller.channels() != n {
            return Err(Error::Config(format!(
                "controller {} has {} channels, the plant {n}",
                c.name,
                c.file.controller.channels()
            )));
        }
    }
    let mr = cfg.reference.model(n)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("reference.json"), serde_json::to_string_pretty(&mr)?)?;
    let mut summary = Summary {
        schema: SCHEMA_VERSION,
        name: cfg.name.clone(),
        seed: cfg.seed,
        rows: Vec::new(),
        sweeps: Vec::new(),
        any_diverged: false,
    };
    let nominal = Bench {
        cfg,
        plant_label: cfg.plant.to_string(),
        plant,
        mr: mr.clone(),
        candidates,
    };
    let mut leaves = Vec::new();
    for s in &cfg.scenarios {
        match s {
            Scenario::DynamicsChange { name, plant, scenarios } => {
                flush(&nominal, &mut leaves, out, &mut summary)?;
                let bench = Bench {
                    cfg,
                    plant_label: plant.to_string(),
                    plant: plant.discrete(ts)?,
                    mr: mr.clone(),
                    candidates: nominal.candidates.clone(),
                };
                let keyed: Vec<_> = scenarios.iter().map(|x| (format!("{name}/{}", x.name()), x)).collect();
                bench.run_all(&keyed, out, &mut summary)?;
            }
            Scenario::Retrain { name, plant, scenarios } => {
                flush(&nominal, &mut leaves, out, &mut summary)?;
                let sub = ExperimentConfig {
                    plant: plant.clone(),
                    ..cfg.clone()
                };
                let sub_out = out.join(name);
                let data = cmd_probe(&sub, &sub_out)?;
                let trained = train_all(&sub, &data, &controllers_dir(&sub_out))?;
                let candidates = trained
                    .into_iter()
                    .map(|(_, t)| Candidate::new(t.file))
                    .collect::<Result<Vec<_>>>()?;
                let bench = Bench {
                    cfg,
                    plant_label: plant.to_string(),
                    plant: plant.discrete(ts)?,
                    mr: mr.clone(),
                    candidates,
                };
                let keyed: Vec<_> = scenarios.iter().map(|x| (format!("{name}/{}", x.name()), x)).collect();
                bench.run_all(&keyed, out, &mut summary)?;
            }
            other => leaves.push((other.name().to_string(), other)),
        }
    }
    flush(&nominal, &mut leaves, out, &mut summary)?;
    summary.any_diverged = summary.rows.iter().flat_map(|r| &r.entries).any(|e| e.diverged)
        || summary.sweeps.iter().flat_map(|r| &r.entries).any(|e| e.diverged_tones > 0);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn flush(bench: &Bench<'_>, leaves: &mut Vec<(String, &Scenario)>, out: &Path, summary: &mut Summary) -> Result<()> {
    bench.run_all(leaves, out, summary)?;
    leaves.clear();
    Ok(())
}

/// Bundled preset configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let joint_probe = ProbeSettings {
        duration_s: 180.0,
        num_tones: 200,
        freq_range_rad_s: [0.5, 100.0],
        amplitude: 0.05,
        sample_period_s: 0.005,
        randomize_amplitudes: false,
        noise_sigma: 0.0,
        feedback: None,
    };
    let joint_train = TrainSettings {
        variants: vec![Variant::IfirPassive, Variant::Pid],
        ifir_order: 500,
        ifir_rate_hz: 200.0,
        pid_rate_hz: 1000.0,
        solver: SolverSettings {
            rho0: 1.0,
            rho: 0.99,
            grid_m: 2048,
            epsilon: crate::solver::EpsilonSetting::Value(1e-3),
            ..Default::default()
        },
        ..Default::default()
    };
    let step = Scenario::Step {
        name: "step".into(),
        amplitude: 1.0,
        duration_s: 3.0,
        direction: None,
    };
    let joint_sweep = Scenario::BodeSweep {
        name: "bode".into(),
        omegas_rad_s: vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 50.0],
        amplitude: 1.0,
        settle_s: 3.0,
        periods: 10,
        channel: 0,
    };
    let cart_probe = ProbeSettings {
        duration_s: 60.0,
        num_tones: 100,
        freq_range_rad_s: [0.5, 100.0],
        amplitude: 2.0,
        ..joint_probe.clone()
    };
    let cart_train = TrainSettings {
        solver: SolverSettings {
            rho0: 200.0,
            rho: 0.99,
            grid_m: 1024,
            epsilon: crate::solver::EpsilonSetting::Value(0.5),
            max_iters: 3000,
            ..Default::default()
        },
        ..joint_train.clone()
    };
    let cart_scenarios = || {
        let dir = Some(vec![1.0, -0.6, 0.4]);
        vec![
            Scenario::RandomCosine {
                name: "random_cosine".into(),
                tones: 8,
                band_rad_s: [0.5, 15.0],
                amplitude: 0.1,
                duration_s: 10.0,
                seed: None,
                direction: dir.clone(),
            },
            Scenario::Trapezoid {
                name: "trapezoid".into(),
                peak: 0.1,
                ramp_s: 0.5,
                dwell_s: 1.0,
                duration_s: 4.0,
                direction: dir,
            },
            Scenario::BodeSweep {
                name: "bode".into(),
                omegas_rad_s: vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 50.0],
                amplitude: 0.1,
                settle_s: 3.0,
                periods: 10,
                channel: 0,
            },
        ]
    };
    let cart_plant = PlantSpec::Preset(PlantPreset::Cartesian3);
    let base = ExperimentConfig {
        schema: SCHEMA_VERSION,
        name: name.to_string(),
        plant: PlantSpec::Preset(PlantPreset::LongPlate),
        reference: ReferenceSpec::FirstOrder { tau_s: 0.05 },
        probe: joint_probe.clone(),
        train: joint_train.clone(),
        loop_cfg: LoopConfig::default(),
        scenarios: vec![step.clone(), joint_sweep.clone()],
        out: None,
        data: None,
        controllers: Vec::new(),
        seed: 0,
    };
    let cfg = match name {
        "joint_nominal" => base,
        "joint_dynamics_change" => ExperimentConfig {
            scenarios: vec![
                step.clone(),
                Scenario::DynamicsChange {
                    name: "short_plate".into(),
                    plant: PlantSpec::Preset(PlantPreset::ShortPlate),
                    scenarios: vec![step.clone(), joint_sweep.clone()],
                },
                Scenario::Retrain {
                    name: "retrained".into(),
                    plant: PlantSpec::Preset(PlantPreset::ShortPlate),
                    scenarios: vec![step.clone(), joint_sweep.clone()],
                },
            ],
            ..base
        },
        "joint_aggressive" => {
            // light modes, the second nearly undamped; probed in closed loop
            let plant = FlexibleJointParams {
                motor_inertia: 0.02,
                motor_damping: 0.1,
                modes: vec![
                    FlexibleMode::from_frequency(0.05, 8.0, 0.05),
                    FlexibleMode::from_frequency(0.03, 25.0, 0.003),
                ],
            };
            ExperimentConfig {
                plant: PlantSpec::Custom(CustomPlant::FlexibleJoint(plant)),
                reference: ReferenceSpec::SecondOrder { omega_n: 10.0, zeta: 0.3 },
                probe: ProbeSettings {
                    num_tones: 10,
                    freq_range_rad_s: [1.0, 10.0],
                    amplitude: 1.0,
                    noise_sigma: 0.2,
                    feedback: Some(ProbeFeedback { kp: 0.4, ki: 2.0 }),
                    ..joint_probe
                },
                train: TrainSettings {
                    variants: vec![Variant::IfirPassive, Variant::IfirUnconstrained, Variant::Pid],
                    ..joint_train
                },
                scenarios: vec![
                    Scenario::Step {
                        name: "step".into(),
                        amplitude: 1.0,
                        duration_s: 10.0,
                        direction: None,
                    },
                    Scenario::Sine {
                        name: "sine".into(),
                        amplitude: 1.0,
                        omega_rad_s: 10.0,
                        duration_s: 20.0,
                        direction: None,
                    },
                ],
                ..base
            }
        }
        "cartesian_siso" => ExperimentConfig {
            plant: cart_plant,
            probe: cart_probe,
            train: TrainSettings {
                structure: Structure::Diagonal,
                ..cart_train
            },
            scenarios: cart_scenarios(),
            ..base
        },
        "cartesian_mimo_mr1" | "cartesian_mimo_mr2" => ExperimentConfig {
            plant: cart_plant,
            reference: if name.ends_with("mr1") {
                ReferenceSpec::FirstOrder { tau_s: 0.05 }
            } else {
                ReferenceSpec::SecondOrder { omega_n: 25.0, zeta: 0.7 }
            },
            probe: cart_probe,
            train: TrainSettings {
                ifir_order: 200,
                ..cart_train
            },
            scenarios: cart_scenarios(),
            ..base
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Sizes the worker pool used by `evaluate`; call once before any work.
pub fn set_jobs(jobs: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}
