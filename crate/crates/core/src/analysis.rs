//! Stepped-sine frequency response, nonlinearity amplitude curves, control
//! trajectories and their CSV/SVG output.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use afx_autodiff::{Precision, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Lowest drive frequency in Hz.
    pub f1: f64,
    /// Highest drive frequency in Hz; `0.9 · fs/2` when absent.
    pub f2: Option<f64>,
    pub steps: usize,
    /// Seconds per sinusoid (`T`).
    pub duration: f64,
    pub amplitude: f64,
    /// Seconds rendered before each sinusoid for stateful models.
    pub warmup: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { f1: 10.0, f2: None, steps: 50, duration: 5.0, amplitude: 0.1, warmup: 1.0 }
    }
}

/// Samples kept from the end of each rendered sinusoid: `T · ⌊fs / f1⌋`.
pub fn tail_length(duration: f64, fs: f64, f1: f64) -> usize {
    (duration * (fs / f1).floor()).round() as usize
}

impl SweepConfig {
    pub fn upper(&self, fs: f64) -> f64 {
        self.f2.unwrap_or(0.9 * fs / 2.0)
    }

    /// Samples per rendered sinusoid.
    pub fn signal_len(&self, fs: f64) -> usize {
        (self.duration * fs).round() as usize
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        let f2 = self.upper(fs);
        if !(self.f1 > 0.0 && self.f1 < f2 && f2 < fs / 2.0) {
            return Err(Error::InvalidParameter(format!("sweep needs 0 < f1 < f2 < fs/2, got f1={} f2={f2} fs={fs}", self.f1)));
        }
        if self.steps < 2 {
            return Err(Error::InvalidParameter("sweep needs at least 2 steps".into()));
        }
        if !(self.amplitude > 0.0) || !(self.duration > 0.0) || self.warmup < 0.0 {
            return Err(Error::InvalidParameter("sweep amplitude and duration must be positive, warmup nonnegative".into()));
        }
        let tail = tail_length(self.duration, fs, self.f1);
        if self.signal_len(fs) < 2 * tail {
            return Err(Error::InvalidParameter(format!(
                "tail of {tail} samples does not fit twice in {} rendered samples",
                self.signal_len(fs)
            )));
        }
        Ok(())
    }

    /// Exponentially spaced drive frequencies from `f1` to `f2`.
    pub fn frequencies(&self, fs: f64) -> Vec<f64> {
        let ratio = self.upper(fs) / self.f1;
        (0..self.steps).map(|k| self.f1 * ratio.powf(k as f64 / (self.steps - 1) as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseCurve {
    pub freqs: Vec<f64>,
    pub magnitude_db: Vec<f64>,
    /// Unwrapped across the grid.
    pub phase_rad: Vec<f64>,
}

/// Removes `2π` jumps between consecutive values.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let d = p + offset - out[i - 1];
            offset -= TAU * (d / TAU).round();
        }
        out.push(p + offset);
    }
    out
}

/// Complex amplitude `A` of the best fit `Re(A e^{iωn})` to `x[n]`, with `n`
/// counted from `n0`.
fn fit_sinusoid(x: &[f64], omega: f64, n0: usize) -> (f64, f64) {
    let (mut cc, mut ss, mut cs, mut xc, mut xs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let ph = omega * (n0 + i) as f64;
        let (s, c) = ph.sin_cos();
        cc += c * c;
        ss += s * s;
        cs += c * s;
        xc += v * c;
        xs += v * s;
    }
    let det = cc * ss - cs * cs;
    let a = (xc * ss - xs * cs) / det;
    let b = (xs * cc - xc * cs) / det;
    // a cos + b sin = Re((a - ib) e^{iωn})
    (a, -b)
}

/// Fundamental gain (dB) and phase (rad) of `y` relative to `x` at `freq`,
/// from the last `tail` samples.
pub fn measure_tone(x: &[f64], y: &[f64], freq: f64, fs: f64, tail: usize) -> Result<(f64, f64)> {
    if tail == 0 || tail > x.len() || x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("tail of {tail} samples exceeds the rendered {} samples", x.len())));
    }
    let n0 = x.len() - tail;
    let omega = TAU * freq / fs;
    let (xr, xi) = fit_sinusoid(&x[n0..], omega, n0);
    let (yr, yi) = fit_sinusoid(&y[n0..], omega, n0);
    let den = xr * xr + xi * xi;
    let hr = (yr * xr + yi * xi) / den;
    let hi = (yi * xr - yr * xi) / den;
    let mag = (hr * hr + hi * hi).sqrt();
    Ok((20.0 * mag.max(1e-300).log10(), hi.atan2(hr)))
}

/// Drives `render` with one sinusoid per grid frequency and measures the
/// fundamental on the tail of each rendering.
pub fn stepped_sine<F>(cfg: &SweepConfig, fs: f64, stateful: bool, mut render: F) -> Result<ResponseCurve>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate(fs)?;
    let tail = tail_length(cfg.duration, fs, cfg.f1);
    let warm = if stateful { (cfg.warmup * fs).round() as usize } else { 0 };
    let len = warm + cfg.signal_len(fs);
    let freqs = cfg.frequencies(fs);
    let mut mags = Vec::with_capacity(freqs.len());
    let mut phases = Vec::with_capacity(freqs.len());
    for &f in &freqs {
        let w = TAU * f / fs;
        let x: Vec<f64> = (0..len).map(|n| cfg.amplitude * (w * n as f64).sin()).collect();
        let y = render(&x)?;
        let (m, p) = measure_tone(&x, &y, f, fs, tail)?;
        mags.push(m);
        phases.push(p);
    }
    Ok(ResponseCurve { freqs, magnitude_db: mags, phase_rad: unwrap_phase(&phases) })
}

/// Stepped-sine response of a whole model at controls `c`.
pub fn stepped_sine_response(model: &Model, cfg: &SweepConfig, c: Option<&[f64]>, precision: Precision) -> Result<ResponseCurve> {
    stepped_sine(cfg, model.spec.sample_rate, model.is_stateful(), |x| model.render(x, c, precision))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmplitudeCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub reference: Vec<f64>,
}

/// `n` points evenly spaced on `[-1, 1]`.
pub fn amplitude_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Samples a memoryless curve on `[-1, 1]` with a `tanh` reference column.
pub fn amplitude_response<F>(n: usize, f: F) -> Result<AmplitudeCurve>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let x = amplitude_grid(n);
    let y = f(&x)?;
    if y.len() != x.len() {
        return Err(Error::Shape(format!("nonlinearity returned {} values for {} inputs", y.len(), x.len())));
    }
    let reference = x.iter().map(|v| v.tanh()).collect();
    Ok(AmplitudeCurve { x, y, reference })
}

/// Per-sample parameter trajectory of a gray-box stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeTrace {
    pub input: Vec<f64>,
    pub names: Vec<String>,
    /// One series per parameter, each as long as `input`.
    pub columns: Vec<Vec<f64>>,
}

/// Physical parameters of gray-box stage `stage` over time for input `x`,
/// held per block.
pub fn time_trace(model: &Model, stage: usize, x: &[f64], c: Option<&[f64]>, precision: Precision) -> Result<TimeTrace> {
    let gb = model.graybox().ok_or_else(|| Error::InvalidArgument("time traces need a gray-box model".into()))?;
    let st = gb.stages.get(stage).ok_or_else(|| Error::InvalidArgument(format!("no stage {stage}")))?;
    if !st.controller.spec.is_dynamic() {
        return Err(Error::InvalidArgument(format!(
            "stage {stage} has static parameters; use the static parameter report instead"
        )));
    }
    let tape = Tape::inference(precision);
    let p = model.store.bind(&tape);
    let xv = tape.constant(Tensor::from_vec(x.to_vec()));
    let cv = c.filter(|c| !c.is_empty()).map(|c| tape.constant(Tensor::from_vec(c.to_vec())));
    let (_, traces) = gb.trace(&p, xv, cv, &model.zero_state())?;
    let phys = &traces[stage].physical;
    let np = st.processor.num_params();
    let bs = gb.block_size;
    let columns = (0..np).map(|j| (0..x.len()).map(|n| phys.data()[(n / bs) * np + j]).collect()).collect();
    Ok(TimeTrace { input: x.to_vec(), names: st.processor.kind.param_names(), columns })
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

impl ResponseCurve {
    /// Columns `freq_hz,mag_db,phase_rad`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.freqs.len()).map(|i| vec![self.freqs[i], self.magnitude_db[i], self.phase_rad[i]]);
        write_rows(path, &["freq_hz", "mag_db", "phase_rad"], rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut curve = Self::default();
        for row in read_rows(path, 3)? {
            curve.freqs.push(row[0]);
            curve.magnitude_db.push(row[1]);
            curve.phase_rad.push(row[2]);
        }
        Ok(curve)
    }

    pub fn to_svg(&self, title: &str) -> String {
        svg_plot(
            title,
            &self.freqs,
            &[Panel { label: "magnitude (dB)", series: vec![&self.magnitude_db] }, Panel { label: "phase (rad)", series: vec![&self.phase_rad] }],
            true,
        )
    }
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != width {
            return Err(Error::Data(format!("{}: expected {width} columns, got {}", path.display(), row.len())));
        }
        out.push(row);
    }
    Ok(out)
}

impl AmplitudeCurve {
    /// Columns `x,y,tanh`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.x.len()).map(|i| vec![self.x[i], self.y[i], self.reference[i]]);
        write_rows(path, &["x", "y", "tanh"], rows)
    }

    pub fn to_svg(&self, title: &str) -> String {
        svg_plot(title, &self.x, &[Panel { label: "output", series: vec![&self.y, &self.reference] }], false)
    }
}

impl TimeTrace {
    /// Columns `sample,input,<parameter names...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["sample", "input"];
        header.extend(self.names.iter().map(String::as_str));
        let rows = (0..self.input.len()).map(|n| {
            let mut r = vec![n as f64, self.input[n]];
            r.extend(self.columns.iter().map(|c| c[n]));
            r
        });
        write_rows(path, &header, rows)
    }

    pub fn to_svg(&self, title: &str) -> String {
        let t: Vec<f64> = (0..self.input.len()).map(|n| n as f64).collect();
        let mut panels = vec![Panel { label: "input", series: vec![&self.input] }];
        for c in &self.columns {
            panels.push(Panel { label: "parameter", series: vec![c] });
        }
        svg_plot(title, &t, &panels, false)
    }
}

/// Writes `svg` to `path`.
pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 480.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 3] = ["#1f4e9c", "#999999", "#b03a2e"];

struct Panel<'a> {
    label: &'a str,
    series: Vec<&'a [f64]>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Stacked line plots sharing one x axis.
fn svg_plot(title: &str, x: &[f64], panels: &[Panel<'_>], log_x: bool) -> String {
    let fx = |v: f64| if log_x { v.max(1e-12).log10() } else { v };
    let (x0, x1) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(fx(v)), b.max(fx(v))));
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
    let stride = x.len().div_ceil(MAX_POINTS).max(1);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 30.0);
    let ph = (SVG_HEIGHT - top - bottom) / panels.len().max(1) as f64;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = write!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, SVG_WIDTH / 2.0, escape(title));
    for (k, panel) in panels.iter().enumerate() {
        let py = top + k as f64 * ph;
        let (y0, y1) = panel
            .series
            .iter()
            .flat_map(|ser| ser.iter())
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (y0, y1) = if y1 > y0 { (y0, y1) } else if y0.is_finite() { (y0 - 1.0, y0 + 1.0) } else { (-1.0, 1.0) };
        let w = SVG_WIDTH - left - right;
        let inner = ph - 20.0;
        let _ = write!(
            s,
            r#"<rect x="{left}" y="{py}" width="{w}" height="{inner}" fill="none" stroke="black" stroke-width="0.5"/>"#
        );
        let _ = write!(
            s,
            r#"<text x="5" y="{:.1}" font-size="10">{}</text><text x="5" y="{:.1}" font-size="9">{y1:.3}</text><text x="5" y="{:.1}" font-size="9">{y0:.3}</text>"#,
            py + inner / 2.0,
            escape(panel.label),
            py + 10.0,
            py + inner
        );
        for (j, ser) in panel.series.iter().enumerate() {
            let mut pts = String::new();
            for i in (0..x.len().min(ser.len())).step_by(stride) {
                if !ser[i].is_finite() {
                    continue;
                }
                let px = left + (fx(x[i]) - x0) / (x1 - x0) * w;
                let yy = py + inner - (ser[i] - y0) / (y1 - y0) * inner;
                let _ = write!(pts, "{px:.2},{yy:.2} ");
            }
            let _ = write!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                COLORS[j % COLORS.len()],
                pts.trim_end()
            );
        }
    }
    let axis = if log_x { "frequency (Hz, log)" } else { "x" };
    let _ = write!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{axis}</text>"#, SVG_WIDTH / 2.0, SVG_HEIGHT - 8.0);
    s.push_str("</svg>\n");
    s
}
