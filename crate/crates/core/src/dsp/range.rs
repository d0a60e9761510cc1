//! Mapping of normalized controls in `[0, 1]` to physical parameter values.

use afx_autodiff::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
}

impl ParamRange {
    pub fn new(min: f64, max: f64, scale: Scale) -> Result<Self> {
        let r = Self { min, max, scale };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidParameter(format!("range needs finite min < max, got [{}, {}]", self.min, self.max)));
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return Err(Error::InvalidParameter(format!("log range needs min > 0, got {}", self.min)));
        }
        Ok(())
    }

    /// Log-spaced cutoff/center frequency in `[20, 0.95 fs/2]` Hz.
    pub fn frequency(fs: f64) -> Self {
        Self { min: 20.0, max: 0.95 * fs / 2.0, scale: Scale::Log }
    }

    /// Filter gain in `[-24, 24]` dB.
    pub fn eq_gain() -> Self {
        Self { min: -24.0, max: 24.0, scale: Scale::Linear }
    }

    /// Quality factor in `[0.3, 10]`, log-spaced.
    pub fn q() -> Self {
        Self { min: 0.3, max: 10.0, scale: Scale::Log }
    }

    /// Gain stage in `[-40, 40]` dB.
    pub fn chain_gain() -> Self {
        Self { min: -40.0, max: 40.0, scale: Scale::Linear }
    }

    /// DC offset in `[-1, 1]`.
    pub fn offset() -> Self {
        Self { min: -1.0, max: 1.0, scale: Scale::Linear }
    }

    /// Physical value of `u`; values outside `[0, 1]` are clamped with a
    /// warning.
    pub fn denormalize(&self, u: f64) -> f64 {
        let u = if (0.0..=1.0).contains(&u) {
            u
        } else {
            log::warn!("normalized control {u} outside [0, 1]; clamping");
            u.clamp(0.0, 1.0)
        };
        match self.scale {
            Scale::Linear => self.min + u * (self.max - self.min),
            Scale::Log => self.min * (u * (self.max / self.min).ln()).exp(),
        }
    }

    /// Inverse of [`ParamRange::denormalize`] for in-range values.
    pub fn normalize(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.min) / (self.max - self.min),
            Scale::Log => (v / self.min).ln() / (self.max / self.min).ln(),
        }
    }

    /// Differentiable denormalization; `u` is clamped to `[0, 1]` first.
    pub fn apply<'t>(&self, u: Var<'t>) -> Var<'t> {
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Linear => u.affine(self.max - self.min, self.min),
            Scale::Log => u.scale((self.max / self.min).ln()).exp().scale(self.min),
        }
    }
}
