//! SVG tracking and Bode plots of an evaluated run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::closedloop::TrackingResult;
use crate::error::{Error, Result};
use crate::experiment::{Summary, Variant};
use crate::lti::{ContinuousTf, FrequencyResponse};
use crate::signals::BodePoint;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 36.0;

pub const TARGET_COLOR: &str = "#000000";

pub fn variant_color(variant: Variant) -> &'static str {
    match variant {
        Variant::IfirPassive => "#d62728",
        Variant::Pid => "#1f77b4",
        Variant::IfirUnconstrained => "#7f7f7f",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Linear,
    Log10,
}

impl Axis {
    fn map(self, v: f64) -> f64 {
        match self {
            Axis::Linear => v,
            Axis::Log10 => v.log10(),
        }
    }
}

/// One trace of a panel.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    /// Markers instead of a polyline.
    pub markers: bool,
    pub dashed: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, color: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color: color.to_string(),
            points,
            markers: false,
            dashed: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_axis: Axis,
    pub series: Vec<Series>,
}

impl Panel {
    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .map(|&(x, y)| (self.x_axis.map(x), y))
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for (x, y) in pts {
            b = Some(match b {
                None => (x, x, y, y),
                Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
            });
        }
        b.map(|(x0, x1, y0, y1)| {
            let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x1 + 0.5) };
            let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 0.5 * y0.abs().max(1.0) };
            (x0, x1, y0 - pad, y1 + pad)
        })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders vertically stacked panels sharing the figure width.
pub fn render_svg(title: &str, panels: &[Panel]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * PANEL_HEIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut svg, panel, MARGIN_TOP + i as f64 * PANEL_HEIGHT);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(svg: &mut String, panel: &Panel, top: f64) {
    let (x0, y0) = (MARGIN_LEFT, top + 20.0);
    let (w, h) = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT, PANEL_HEIGHT - 20.0 - MARGIN_BOTTOM);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        x0 + w / 2.0,
        top + 14.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##
    );
    let Some((bx0, bx1, by0, by1)) = panel.bounds() else {
        return;
    };
    let px = |x: f64| x0 + (panel.x_axis.map(x) - bx0) / (bx1 - bx0) * w;
    let py = |y: f64| y0 + h - (y - by0) / (by1 - by0) * h;
    for t in 0..=4 {
        let fx = bx0 + (bx1 - bx0) * t as f64 / 4.0;
        let label = match panel.x_axis {
            Axis::Linear => format!("{fx:.3}"),
            Axis::Log10 => format!("{:.3}", 10f64.powf(fx)),
        };
        let sx = x0 + w * t as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{sx}" y1="{y0}" x2="{sx}" y2="{}" stroke="#ddd"/><text x="{sx}" y="{}" text-anchor="middle">{}</text>"##,
            y0 + h,
            y0 + h + 14.0,
            trim_zeros(&label)
        );
        let fy = by0 + (by1 - by0) * t as f64 / 4.0;
        let sy = py(fy);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{sy}" x2="{}" y2="{sy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            x0 + w,
            x0 - 4.0,
            sy + 4.0,
            trim_zeros(&format!("{fy:.4}"))
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        y0 + h + 28.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        y0 + h / 2.0,
        y0 + h / 2.0,
        escape(&panel.y_label)
    );
    for (i, s) in panel.series.iter().enumerate() {
        let finite = s.points.iter().filter(|(x, y)| panel.x_axis.map(*x).is_finite() && y.is_finite());
        if s.markers {
            for &(x, y) in finite {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                    px(x),
                    py(y),
                    s.color
                );
            }
        } else {
            let pts: Vec<String> = finite.map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
        }
        let ly = y0 + 12.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x0 + w - 140.0,
            ly - 4.0,
            x0 + w - 120.0,
            ly - 4.0,
            s.color,
            x0 + w - 114.0,
            ly,
            escape(&s.label)
        );
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Longest plotted record; longer signals are strided down to this.
const MAX_POINTS: usize = 4000;

fn trace(t0: f64, ts: f64, values: &[f64]) -> Vec<(f64, f64)> {
    let stride = values.len().div_ceil(MAX_POINTS).max(1);
    values
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(k, v)| (t0 + k as f64 * ts, *v))
        .collect()
}

/// Tracking figure: desired response and every controller's output, one
/// panel per channel.
pub fn tracking_figure(title: &str, runs: &[(String, Variant, TrackingResult)]) -> Result<String> {
    let Some((_, _, first)) = runs.first() else {
        return Err(Error::Config(format!("no tracking results for {title}")));
    };
    let ts = first.y_star.sample_period();
    let mut panels = Vec::new();
    for c in 0..first.y_star.channels() {
        let mut series = vec![Series::line("target", TARGET_COLOR, trace(0.0, ts, &first.y_star.channel(c)))];
        for (name, variant, res) in runs {
            series.push(Series::line(name.as_str(), variant_color(*variant), trace(0.0, ts, &res.y.channel(c))));
        }
        panels.push(Panel {
            title: format!("channel {c}"),
            x_label: "time [s]".into(),
            y_label: "output".into(),
            x_axis: Axis::Linear,
            series,
        });
    }
    Ok(render_svg(title, &panels))
}

/// Bode figure: estimated closed-loop points over the analytic reference.
pub fn bode_figure(title: &str, reference: &ContinuousTf, runs: &[(String, Variant, Vec<BodePoint>)]) -> Result<String> {
    let points: Vec<&BodePoint> = runs.iter().flat_map(|(_, _, p)| p.iter()).collect();
    let Some(first) = points.first() else {
        return Err(Error::Config(format!("no Bode points for {title}")));
    };
    let (i, o) = (first.input_channel, first.output_channel);
    let lo = points.iter().map(|p| p.omega_rad_s).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.omega_rad_s).fold(0.0, f64::max);
    let (lo, hi) = (lo / 2.0, hi * 2.0);
    let mut mag = Vec::new();
    let mut phase = Vec::new();
    for k in 0..=200 {
        let w = lo * (hi / lo).powf(k as f64 / 200.0);
        let g = reference.freq_response(w)?[(o, i)];
        mag.push((w, 20.0 * g.norm().log10()));
        phase.push((w, g.arg().to_degrees()));
    }
    let mut mag_series = vec![Series { dashed: true, ..Series::line("M_r", TARGET_COLOR, mag) }];
    let mut phase_series = vec![Series { dashed: true, ..Series::line("M_r", TARGET_COLOR, phase) }];
    for (name, variant, pts) in runs {
        let ok: Vec<&BodePoint> = pts.iter().filter(|p| !p.diverged).collect();
        let marker = |points: Vec<(f64, f64)>| Series {
            markers: true,
            ..Series::line(name.as_str(), variant_color(*variant), points)
        };
        mag_series.push(marker(ok.iter().map(|p| (p.omega_rad_s, 20.0 * p.gain.log10())).collect()));
        phase_series.push(marker(ok.iter().map(|p| (p.omega_rad_s, p.phase_rad.to_degrees())).collect()));
    }
    let panels = [
        Panel {
            title: format!("magnitude, input {i} to output {o}"),
            x_label: "frequency [rad/s]".into(),
            y_label: "gain [dB]".into(),
            x_axis: Axis::Log10,
            series: mag_series,
        },
        Panel {
            title: "phase".into(),
            x_label: "frequency [rad/s]".into(),
            y_label: "phase [deg]".into(),
            x_axis: Axis::Log10,
            series: phase_series,
        },
    ];
    Ok(render_svg(title, &panels))
}

fn read_bode(path: &Path) -> Result<Vec<BodePoint>> {
    if !path.is_file() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    Ok(csv::Reader::from_path(path)?
        .deserialize()
        .collect::<std::result::Result<Vec<BodePoint>, _>>()?)
}

fn file_stem(key: &str) -> String {
    key.replace('/', "__")
}

/// Writes one tracking figure per summary row and one Bode figure per
/// sweep under `<run>/report/`, and returns the written paths.
pub fn write_report(run: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = run.join("summary.json");
    if !summary_path.is_file() {
        return Err(Error::Missing(summary_path));
    }
    let summary: Summary = serde_json::from_str(&fs::read_to_string(&summary_path)?)?;
    let reference_path = run.join("reference.json");
    if !reference_path.is_file() {
        return Err(Error::Missing(reference_path));
    }
    let reference: ContinuousTf = serde_json::from_str(&fs::read_to_string(&reference_path)?)?;
    let dir = run.join("report");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for row in &summary.rows {
        let scenario_dir = run.join("scenarios").join(&row.scenario);
        let runs = row
            .entries
            .iter()
            .map(|e| Ok((e.controller.clone(), e.variant, TrackingResult::load(&scenario_dir.join(&e.controller))?)))
            .collect::<Result<Vec<_>>>()?;
        let title = format!("{} on {}", row.scenario, row.plant);
        let path = dir.join(format!("{}_tracking.svg", file_stem(&row.scenario)));
        fs::write(&path, tracking_figure(&title, &runs)?)?;
        written.push(path);
    }
    for sweep in &summary.sweeps {
        let scenario_dir = run.join("scenarios").join(&sweep.scenario);
        let runs = sweep
            .entries
            .iter()
            .map(|e| Ok((e.controller.clone(), e.variant, read_bode(&scenario_dir.join(&e.controller).join("bode.csv"))?)))
            .collect::<Result<Vec<_>>>()?;
        let title = format!("{} on {}", sweep.scenario, sweep.plant);
        let path = dir.join(format!("{}_bode.svg", file_stem(&sweep.scenario)));
        fs::write(&path, bode_figure(&title, &reference, &runs)?)?;
        written.push(path);
    }
    Ok(written)
}
