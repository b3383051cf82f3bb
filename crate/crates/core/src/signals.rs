//! Uniformly sampled multichannel signals, multisine probing, single-bin DFT
//! frequency-response estimation and tracking metrics.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on the CSV time column step.
pub const CSV_TIME_TOL: f64 = 1e-9;

/// Dense, column-per-channel time series on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    sample_period_s: f64,
    start_time_s: f64,
    samples: DMatrix<f64>,
}

impl Signal {
    /// `samples` is N x channels.
    pub fn new(sample_period_s: f64, samples: DMatrix<f64>) -> Result<Self> {
        if !(sample_period_s > 0.0 && sample_period_s.is_finite()) {
            return Err(invalid(format!("sample period must be positive, got {sample_period_s}")));
        }
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(invalid("signal needs at least one sample and one channel"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("signal contains non-finite samples"));
        }
        Ok(Self {
            sample_period_s,
            start_time_s: 0.0,
            samples,
        })
    }

    pub fn from_channels(sample_period_s: f64, channels: &[Vec<f64>]) -> Result<Self> {
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(invalid("channels have different lengths"));
        }
        Self::new(
            sample_period_s,
            DMatrix::from_fn(n, channels.len(), |i, j| channels[j][i]),
        )
    }

    pub fn from_fn(
        sample_period_s: f64,
        len: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        Self::new(sample_period_s, DMatrix::from_fn(len, channels, |i, j| f(i, j)))
    }

    pub fn zeros(sample_period_s: f64, len: usize, channels: usize) -> Result<Self> {
        Self::new(sample_period_s, DMatrix::zeros(len, channels))
    }

    pub fn with_start_time(mut self, start_time_s: f64) -> Self {
        self.start_time_s = start_time_s;
        self
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period_s
    }

    pub fn start_time(&self) -> f64 {
        self.start_time_s
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> DMatrix<f64> {
        self.samples
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start_time_s + k as f64 * self.sample_period_s
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.sample_period_s
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.column(c).iter().copied().collect()
    }

    pub fn at(&self, k: usize) -> DVector<f64> {
        self.samples.row(k).transpose()
    }

    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.samples[(k, c)]
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Signal {
        Signal {
            samples: &self.samples * alpha,
            ..self.clone()
        }
    }

    /// Samples `[start, end)`; the start time shifts accordingly.
    pub fn slice(&self, start: usize, end: usize) -> Result<Signal> {
        if start >= end || end > self.len() {
            return Err(invalid(format!(
                "slice [{start}, {end}) out of range for {} samples",
                self.len()
            )));
        }
        Ok(Signal {
            sample_period_s: self.sample_period_s,
            start_time_s: self.time(start),
            samples: self.samples.rows(start, end - start).into_owned(),
        })
    }

    /// Keeps every `factor`-th sample starting from the first.
    pub fn decimate(&self, factor: usize) -> Result<Signal> {
        if factor == 0 {
            return Err(invalid("decimation factor must be >= 1"));
        }
        let n = self.len().div_ceil(factor);
        let samples = DMatrix::from_fn(n, self.channels(), |i, j| self.samples[(i * factor, j)]);
        Ok(Signal {
            sample_period_s: self.sample_period_s * factor as f64,
            start_time_s: self.start_time_s,
            samples,
        })
    }

    /// Repeats every sample `factor` times: a zero-order hold onto a faster grid.
    pub fn hold(&self, factor: usize) -> Result<Signal> {
        if factor == 0 {
            return Err(invalid("hold factor must be >= 1"));
        }
        let samples = DMatrix::from_fn(self.len() * factor, self.channels(), |i, j| self.samples[(i / factor, j)]);
        Ok(Signal {
            sample_period_s: self.sample_period_s / factor as f64,
            start_time_s: self.start_time_s,
            samples,
        })
    }

    /// Concatenates signals of equal rate and channel count.
    pub fn concat(parts: &[Signal]) -> Result<Signal> {
        let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
        let ch = first.channels();
        let mut rows = 0;
        for p in parts {
            check_rate(first, p)?;
            if p.channels() != ch {
                return Err(Error::DimensionMismatch {
                    what: "channels",
                    expected: ch,
                    actual: p.channels(),
                });
            }
            rows += p.len();
        }
        let mut samples = DMatrix::zeros(rows, ch);
        let mut at = 0;
        for p in parts {
            samples.rows_mut(at, p.len()).copy_from(&p.samples);
            at += p.len();
        }
        Ok(Signal {
            sample_period_s: first.sample_period_s,
            start_time_s: first.start_time_s,
            samples,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.channels() {
            return Err(Error::DimensionMismatch {
                what: "csv column names",
                expected: self.channels(),
                actual: names.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.channels() + 1);
        for k in 0..self.len() {
            record.clear();
            record.push(self.time(k).to_string());
            record.extend(self.samples.row(k).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), names)
    }

    /// Parses the `t,<name_0>,...` CSV format, validating the time grid.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Signal, Vec<String>)> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") || header.len() < 2 {
            return Err(Error::Config("csv header must be `t,<name_0>,...`".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut vals = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
            });
            times.push(vals.next().ok_or_else(|| Error::Config("empty csv row".into()))??);
            for v in vals {
                data.push(v?);
            }
        }
        let n = times.len();
        if n < 2 {
            return Err(Error::Config("csv signal needs at least two rows".into()));
        }
        let ts = times[1] - times[0];
        if ts <= 0.0 {
            return Err(Error::Config("time column must be strictly increasing".into()));
        }
        for (k, t) in times.iter().enumerate() {
            if (t - (times[0] + k as f64 * ts)).abs() > CSV_TIME_TOL.max(ts * 1e-9) {
                return Err(Error::Config(format!("non-uniform time step at row {k}")));
            }
        }
        let ch = names.len();
        if data.len() != n * ch {
            return Err(Error::Config("ragged csv rows".into()));
        }
        let samples = DMatrix::from_row_slice(n, ch, &data);
        Ok((Signal::new(ts, samples)?.with_start_time(times[0]), names))
    }

    pub fn load_csv(path: &Path) -> Result<(Signal, Vec<String>)> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub(crate) fn check_rate(a: &Signal, b: &Signal) -> Result<()> {
    let (ta, tb) = (a.sample_period(), b.sample_period());
    if (ta - tb).abs() > 1e-12 * ta.max(tb) {
        return Err(Error::RateMismatch(ta, tb));
    }
    Ok(())
}

pub(crate) fn check_same_shape(a: &Signal, b: &Signal) -> Result<()> {
    check_rate(a, b)?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "signal length",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch {
            what: "signal channels",
            expected: a.channels(),
            actual: b.channels(),
        });
    }
    Ok(())
}

/// Multisine excitation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub num_tones: usize,
    pub freq_range_rad_s: [f64; 2],
    pub phase_range_rad: [f64; 2],
    /// One amplitude per tone, or a single value broadcast to all tones.
    pub amplitudes: Vec<f64>,
    pub duration_s: f64,
    pub sample_period_s: f64,
    pub seed: u64,
    /// Perturb amplitudes by a seeded factor in [0.5, 1.5].
    pub randomize_amplitudes: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_tones: 10,
            freq_range_rad_s: [1.0, 10.0],
            phase_range_rad: [0.0, PI],
            amplitudes: vec![1.0],
            duration_s: 180.0,
            sample_period_s: 1e-3,
            seed: 0,
            randomize_amplitudes: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let [low, high] = self.freq_range_rad_s;
        if self.num_tones == 0 {
            return Err(invalid("num_tones must be >= 1"));
        }
        if !(low > 0.0) || high < low || (self.num_tones > 1 && high <= low) {
            return Err(invalid(format!("bad frequency range [{low}, {high}]")));
        }
        if !(self.sample_period_s > 0.0) {
            return Err(invalid("sample period must be positive"));
        }
        if high >= PI / self.sample_period_s {
            return Err(invalid("highest tone is above Nyquist"));
        }
        let slowest = 2.0 * PI / low;
        if !(self.duration_s >= slowest * (1.0 - 1e-12)) {
            return Err(invalid(format!(
                "duration {} s is shorter than one period of the lowest tone ({slowest} s)",
                self.duration_s
            )));
        }
        if self.amplitudes.is_empty()
            || (self.amplitudes.len() != 1 && self.amplitudes.len() != self.num_tones)
        {
            return Err(invalid("amplitudes must have one entry or one per tone"));
        }
        if self.amplitudes.iter().any(|a| !(*a > 0.0)) {
            return Err(invalid("amplitudes must be positive"));
        }
        Ok(())
    }

    pub fn tones(&self) -> Vec<f64> {
        spaced(self.freq_range_rad_s, self.num_tones)
    }

    pub fn phases(&self) -> Vec<f64> {
        spaced(self.phase_range_rad, self.num_tones)
    }

    pub fn tone_amplitudes(&self) -> Vec<f64> {
        let base: Vec<f64> = if self.amplitudes.len() == 1 {
            vec![self.amplitudes[0]; self.num_tones]
        } else {
            self.amplitudes.clone()
        };
        if !self.randomize_amplitudes {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        base.into_iter()
            .map(|a| a * rng.random_range(0.5..1.5))
            .collect()
    }
}

fn spaced([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Sum-of-sines probe, identical on every channel.
pub fn multisine(cfg: &ProbeConfig, channels: usize) -> Result<Signal> {
    cfg.validate()?;
    if channels == 0 {
        return Err(invalid("channels must be >= 1"));
    }
    let ts = cfg.sample_period_s;
    let n = ((cfg.duration_s / ts) + 1e-9).floor().max(1.0) as usize;
    let tones = cfg.tones();
    let phases = cfg.phases();
    let amps = cfg.tone_amplitudes();
    let col: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 * ts;
            tones
                .iter()
                .zip(&phases)
                .zip(&amps)
                .map(|((w, p), a)| a * (w * t + p).sin())
                .sum()
        })
        .collect();
    Signal::from_fn(ts, n, channels, |i, _| col[i])
}

/// Multichannel probe with disjoint tone sets: the tone grid holds
/// `num_tones * channels` frequencies and channel `c` takes every
/// `channels`-th one starting at index `c`, so the channels are uncorrelated
/// over whole periods.
pub fn multisine_zipped(cfg: &ProbeConfig, channels: usize) -> Result<Signal> {
    if channels == 0 {
        return Err(invalid("channels must be >= 1"));
    }
    let full = ProbeConfig {
        num_tones: cfg.num_tones * channels,
        amplitudes: if cfg.amplitudes.len() == 1 {
            cfg.amplitudes.clone()
        } else {
            cfg.amplitudes.iter().flat_map(|a| std::iter::repeat_n(*a, channels)).collect()
        },
        ..cfg.clone()
    };
    full.validate()?;
    let ts = full.sample_period_s;
    let n = ((full.duration_s / ts) + 1e-9).floor().max(1.0) as usize;
    let tones = full.tones();
    let phases = full.phases();
    let amps = full.tone_amplitudes();
    Signal::from_fn(ts, n, channels, |k, c| {
        let t = k as f64 * ts;
        (c..tones.len())
            .step_by(channels)
            .map(|i| amps[i] * (tones[i] * t + phases[i]).sin())
            .sum()
    })
}

/// One estimated point of a frequency response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodePoint {
    pub omega_rad_s: f64,
    pub input_channel: usize,
    pub output_channel: usize,
    pub gain: f64,
    pub phase_rad: f64,
    #[serde(default)]
    pub diverged: bool,
}

impl BodePoint {
    pub fn complex(&self) -> Complex64 {
        Complex64::from_polar(self.gain, self.phase_rad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DftOptions {
    /// Fraction of the record discarded as transient.
    pub transient_fraction: f64,
    /// Shorten the analysis window to the nearest whole number of periods.
    pub trim_to_periods: bool,
    pub input_channel: usize,
    pub output_channel: usize,
}

impl Default for DftOptions {
    fn default() -> Self {
        Self {
            transient_fraction: 0.25,
            trim_to_periods: true,
            input_channel: 0,
            output_channel: 0,
        }
    }
}

pub fn dft_gain_phase(input: &Signal, output: &Signal, omega_rad_s: f64) -> Result<BodePoint> {
    dft_gain_phase_with(input, output, omega_rad_s, &DftOptions::default())
}

/// Ratio of output over input Fourier coefficients at `omega_rad_s`, computed
/// on a whole-period window after dropping the transient prefix.
pub fn dft_gain_phase_with(
    input: &Signal,
    output: &Signal,
    omega_rad_s: f64,
    opts: &DftOptions,
) -> Result<BodePoint> {
    check_rate(input, output)?;
    if input.len() != output.len() {
        return Err(Error::DimensionMismatch {
            what: "signal length",
            expected: input.len(),
            actual: output.len(),
        });
    }
    if opts.input_channel >= input.channels() || opts.output_channel >= output.channels() {
        return Err(invalid("dft channel index out of range"));
    }
    let ts = input.sample_period();
    if !(omega_rad_s > 0.0) || omega_rad_s >= PI / ts {
        return Err(Error::Unresolvable {
            omega: omega_rad_s,
            reason: "outside (0, Nyquist)".into(),
        });
    }
    let (start, len) = analysis_window(input.len(), ts, omega_rad_s, opts)?;
    let x = tone_phasors(input, opts.input_channel, start, len, &[omega_rad_s])?[0];
    let y = tone_phasors(output, opts.output_channel, start, len, &[omega_rad_s])?[0];
    ratio_point(omega_rad_s, opts, x, y, input, start, len)
}

/// Joint estimate at several tones from one record, for multisine probes.
pub fn multitone_gain_phase(
    input: &Signal,
    output: &Signal,
    omegas_rad_s: &[f64],
    opts: &DftOptions,
) -> Result<Vec<BodePoint>> {
    check_rate(input, output)?;
    if input.len() != output.len() {
        return Err(Error::DimensionMismatch {
            what: "signal length",
            expected: input.len(),
            actual: output.len(),
        });
    }
    if opts.input_channel >= input.channels() || opts.output_channel >= output.channels() {
        return Err(invalid("dft channel index out of range"));
    }
    let ts = input.sample_period();
    let slowest = omegas_rad_s.iter().copied().fold(f64::INFINITY, f64::min);
    for &w in omegas_rad_s {
        if !(w > 0.0) || w >= PI / ts {
            return Err(Error::Unresolvable {
                omega: w,
                reason: "outside (0, Nyquist)".into(),
            });
        }
    }
    let (start, len) = analysis_window(input.len(), ts, slowest, opts)?;
    let x = tone_phasors(input, opts.input_channel, start, len, omegas_rad_s)?;
    let y = tone_phasors(output, opts.output_channel, start, len, omegas_rad_s)?;
    omegas_rad_s
        .iter()
        .zip(x.iter().zip(&y))
        .map(|(&w, (&xi, &yi))| ratio_point(w, opts, xi, yi, input, start, len))
        .collect()
}

fn analysis_window(n: usize, ts: f64, omega: f64, opts: &DftOptions) -> Result<(usize, usize)> {
    if !(0.0..1.0).contains(&opts.transient_fraction) {
        return Err(invalid("transient fraction must lie in [0, 1)"));
    }
    let start = (n as f64 * opts.transient_fraction).floor() as usize;
    let mut len = n - start;
    let samples_per_period = 2.0 * PI / (omega * ts);
    let periods = (len as f64 / samples_per_period).floor();
    if periods < 2.0 {
        return Err(Error::Unresolvable {
            omega,
            reason: format!("fewer than two periods in the {len}-sample window"),
        });
    }
    if opts.trim_to_periods {
        len = ((periods * samples_per_period).round() as usize).min(len);
    }
    // keep the tail of the record, furthest from the transient
    Ok((n - len, len))
}

fn ratio_point(
    omega: f64,
    opts: &DftOptions,
    x: Complex64,
    y: Complex64,
    input: &Signal,
    start: usize,
    len: usize,
) -> Result<BodePoint> {
    let rms = ((start..start + len)
        .map(|k| input.get(k, opts.input_channel).powi(2))
        .sum::<f64>()
        / len as f64)
        .sqrt();
    if x.norm() <= 1e-9 * rms || x.norm() == 0.0 {
        return Err(Error::ZeroEnergy("input has no energy at the requested frequency"));
    }
    let h = y / x;
    Ok(BodePoint {
        omega_rad_s: omega,
        input_channel: opts.input_channel,
        output_channel: opts.output_channel,
        gain: h.norm(),
        phase_rad: wrap_phase(h.arg()),
        diverged: false,
    })
}

/// Least-squares phasors `a - j b` of `a cos(w t) + b sin(w t)` per tone, with
/// a constant offset absorbed. On whole-period windows this equals the DFT
/// coefficient at the tone.
fn tone_phasors(s: &Signal, ch: usize, start: usize, len: usize, omegas: &[f64]) -> Result<Vec<Complex64>> {
    let ts = s.sample_period();
    let p = 1 + 2 * omegas.len();
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for n in 0..len {
        let t = n as f64 * ts;
        row[0] = 1.0;
        for (i, w) in omegas.iter().enumerate() {
            let (sn, cs) = (w * t).sin_cos();
            row[1 + 2 * i] = cs;
            row[2 + 2 * i] = sn;
        }
        let v = s.get(start + n, ch);
        for i in 0..p {
            rhs[i] += row[i] * v;
            for j in i..p {
                g[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    let coef = g
        .cholesky()
        .ok_or(Error::Singular("tone regression"))?
        .solve(&rhs);
    Ok((0..omegas.len())
        .map(|i| Complex64::new(coef[1 + 2 * i], -coef[2 + 2 * i]))
        .collect())
}

/// Maps an angle into (-pi, pi].
pub fn wrap_phase(p: f64) -> f64 {
    let mut w = p % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Normalized RMS tracking error over all samples and channels.
pub fn nrmse(y: &Signal, y_star: &Signal) -> Result<f64> {
    check_same_shape(y, y_star)?;
    let den: f64 = y_star.samples().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroEnergy("desired response is identically zero"));
    }
    let num: f64 = y
        .samples()
        .iter()
        .zip(y_star.samples().iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((num / den).sqrt())
}

/// Percent reduction of the iFIR error relative to the PID error.
pub fn improvement(nrmse_pid: f64, nrmse_ifir: f64) -> Result<f64> {
    if !(nrmse_pid > 0.0) {
        return Err(invalid(format!("baseline NRMSE must be positive, got {nrmse_pid}")));
    }
    Ok(100.0 * (nrmse_pid - nrmse_ifir) / nrmse_pid)
}
