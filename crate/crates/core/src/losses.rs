//! Training losses and evaluation metrics.
//!
//! Tape versions take `(target, prediction)` as `[T]` vars; the plain
//! versions take slices.

use std::f64::consts::PI;

use afx_autodiff::{Precision, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes are floored at this value before division and logarithms.
pub const MAG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub fft_size: usize,
    pub hop: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrStftConfig {
    pub resolutions: Vec<Resolution>,
}

impl Default for MrStftConfig {
    fn default() -> Self {
        let r = |fft_size, hop, window| Resolution { fft_size, hop, window };
        Self { resolutions: vec![r(1024, 256, 1024), r(2048, 512, 2048), r(512, 128, 512)] }
    }
}

impl MrStftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::InvalidParameter("MR-STFT needs at least one resolution".into()));
        }
        for r in &self.resolutions {
            if !(r.fft_size >= r.window && r.window > r.hop && r.hop > 0) {
                return Err(Error::InvalidParameter(format!("resolution needs fft_size >= window > hop > 0, got {r:?}")));
            }
            if !r.fft_size.is_power_of_two() {
                return Err(Error::InvalidParameter(format!("fft_size {} is not a power of two", r.fft_size)));
            }
        }
        Ok(())
    }

    /// Shortest signal the loss accepts.
    pub fn min_len(&self) -> usize {
        self.resolutions.iter().map(|r| r.fft_size).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_mrstft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_l1: 1.0, w_mrstft: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w >= 0.0 && w.is_finite();
        if !ok(self.w_l1) || !ok(self.w_mrstft) || (self.w_l1 == 0.0 && self.w_mrstft == 0.0) {
            return Err(Error::InvalidParameter(format!("loss weights must be nonnegative and not both zero, got {self:?}")));
        }
        Ok(())
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Shape("empty signals".into()));
    }
    Ok(())
}

/// Mean absolute error.
pub fn l1<'t>(y: Var<'t>, y_hat: Var<'t>) -> Result<Var<'t>> {
    check_len(y.numel(), y_hat.numel())?;
    Ok((y - y_hat).abs().mean())
}

pub fn mse<'t>(y: Var<'t>, y_hat: Var<'t>) -> Result<Var<'t>> {
    check_len(y.numel(), y_hat.numel())?;
    Ok((y - y_hat).square().mean())
}

/// `Σ(y - ŷ)² / Σy²`; the target's energy is treated as a constant.
pub fn esr<'t>(y: Var<'t>, y_hat: Var<'t>) -> Result<Var<'t>> {
    check_len(y.numel(), y_hat.numel())?;
    let energy: f64 = y.to_vec().iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return Err(Error::UndefinedMetric("ESR of a silent target".into()));
    }
    Ok((y - y_hat).square().sum().scale(1.0 / energy))
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn magnitudes<'t>(x: Var<'t>, r: &Resolution) -> Var<'t> {
    let frames = x.frames(r.window, r.hop);
    let win = x.tape().constant(Tensor::from_vec(hann(r.window)));
    let spec = (frames * win).pad(1, 0, r.fft_size - r.window).rfft();
    let power = spec.select(0).square() + spec.select(1).square();
    power.clamp(MAG_FLOOR * MAG_FLOOR, f64::INFINITY).sqrt()
}

/// Mean over resolutions of spectral convergence plus mean absolute log
/// magnitude difference.
pub fn mrstft<'t>(y: Var<'t>, y_hat: Var<'t>, cfg: &MrStftConfig) -> Result<Var<'t>> {
    check_len(y.numel(), y_hat.numel())?;
    let n = y.numel();
    if n < cfg.min_len() {
        return Err(Error::InvalidArgument(format!("signal of {n} samples is shorter than fft_size {}", cfg.min_len())));
    }
    let terms: Vec<Var<'t>> = cfg
        .resolutions
        .iter()
        .map(|r| {
            let my = magnitudes(y, r);
            let mh = magnitudes(y_hat, r);
            // the floor (normal in f32) keeps the gradient finite at an exact match
            let diff = (my - mh).square().sum().clamp(f32::MIN_POSITIVE as f64, f64::INFINITY).sqrt();
            let sc = diff / my.square().sum().sqrt();
            let lg = (my.ln() - mh.ln()).abs().mean();
            sc + lg
        })
        .collect();
    let k = terms.len() as f64;
    let total = terms.into_iter().reduce(|a, b| a + b).expect("validated non-empty");
    Ok(total.scale(1.0 / k))
}

/// Loss value with its parts, as reported in evaluation tables.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub l1: Var<'t>,
    pub mrstft: Var<'t>,
}

/// `w_l1 · L1 + w_mrstft · MR-STFT`. A term with zero weight is not
/// computed.
pub fn combined_loss<'t>(y: Var<'t>, y_hat: Var<'t>, w: &LossWeights, cfg: &MrStftConfig) -> Result<LossParts<'t>> {
    let tape = y.tape();
    let l = l1(y, y_hat)?;
    let m = if w.w_mrstft != 0.0 { mrstft(y, y_hat, cfg)? } else { tape.scalar(0.0) };
    let total = l.scale(w.w_l1) + m.scale(w.w_mrstft);
    Ok(LossParts { total, l1: l, mrstft: m })
}

/// Plain metrics for evaluation.
pub mod metrics {
    use super::*;

    pub fn l1(y: &[f64], y_hat: &[f64]) -> Result<f64> {
        mae(y, y_hat)
    }

    pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
        check_len(y.len(), y_hat.len())?;
        Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
    }

    pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
        check_len(y.len(), y_hat.len())?;
        Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
    }

    /// Mean of `|y - ŷ| / max(|y|, 1e-8)`.
    pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
        check_len(y.len(), y_hat.len())?;
        Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs() / a.abs().max(1e-8)).sum::<f64>() / y.len() as f64)
    }

    pub fn esr(y: &[f64], y_hat: &[f64]) -> Result<f64> {
        check_len(y.len(), y_hat.len())?;
        let energy: f64 = y.iter().map(|v| v * v).sum();
        if energy <= 0.0 {
            return Err(Error::UndefinedMetric("ESR of a silent target".into()));
        }
        Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / energy)
    }

    /// `(mean(y) - mean(ŷ))² / mean(y²)`.
    pub fn dc_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
        check_len(y.len(), y_hat.len())?;
        let n = y.len() as f64;
        let power = y.iter().map(|v| v * v).sum::<f64>() / n;
        if power <= 0.0 {
            return Err(Error::UndefinedMetric("DC loss of a silent target".into()));
        }
        let dm = y.iter().sum::<f64>() / n - y_hat.iter().sum::<f64>() / n;
        Ok(dm * dm / power)
    }

    pub fn mrstft(y: &[f64], y_hat: &[f64], cfg: &MrStftConfig) -> Result<f64> {
        let tape = Tape::inference(Precision::F64);
        let a = tape.constant(Tensor::from_vec(y.to_vec()));
        let b = tape.constant(Tensor::from_vec(y_hat.to_vec()));
        Ok(super::mrstft(a, b, cfg)?.item())
    }
}
