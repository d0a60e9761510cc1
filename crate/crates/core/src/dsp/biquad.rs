//! Second-order section design (audio EQ cookbook) and evaluation.

use std::f64::consts::{LN_10, PI};

use afx_autodiff::{Complex64, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    LowShelf,
    HighShelf,
    Peak,
}

impl FilterKind {
    pub fn has_gain(self) -> bool {
        matches!(self, FilterKind::LowShelf | FilterKind::HighShelf | FilterKind::Peak)
    }

    /// Controlled parameters: `(gain_db, f0, q)` or `(f0, q)`.
    pub fn num_params(self) -> usize {
        if self.has_gain() {
            3
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub kind: FilterKind,
    pub f0: f64,
    /// Ignored by lowpass and highpass.
    pub gain_db: f64,
    pub q: f64,
    pub fs: f64,
}

/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (a0 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadSection {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl BiquadSection {
    pub fn identity() -> Self {
        Self { b: [1.0, 0.0, 0.0], a: [1.0, 0.0, 0.0] }
    }

    /// `[b0, b1, b2, a0, a1, a2]`.
    pub fn coeffs(&self) -> [f64; 6] {
        [self.b[0], self.b[1], self.b[2], self.a[0], self.a[1], self.a[2]]
    }

    /// `H(e^{jω})`.
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }

    /// Poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[1] / self.a[0], self.a[2] / self.a[0]);
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }
}

pub fn biquad_coefficients(p: &FilterParams) -> Result<BiquadSection> {
    if !(p.fs > 0.0) {
        return Err(Error::InvalidParameter(format!("sample rate must be positive, got {}", p.fs)));
    }
    if !(p.f0 > 0.0 && p.f0 < p.fs / 2.0) {
        return Err(Error::InvalidParameter(format!("f0 = {} Hz must lie in (0, {})", p.f0, p.fs / 2.0)));
    }
    if !(p.q > 0.0) {
        return Err(Error::InvalidParameter(format!("Q must be positive, got {}", p.q)));
    }
    let w0 = 2.0 * PI * p.f0 / p.fs;
    let (cw, sw) = (w0.cos(), w0.sin());
    let alpha = sw / (2.0 * p.q);
    let a = 10f64.powf(p.gain_db / 40.0);
    let sa = 2.0 * a.sqrt() * alpha;
    let (b, den) = match p.kind {
        FilterKind::Lowpass => ([(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0], [1.0 + alpha, -2.0 * cw, 1.0 - alpha]),
        FilterKind::Highpass => {
            ([(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0], [1.0 + alpha, -2.0 * cw, 1.0 - alpha])
        }
        FilterKind::LowShelf => (
            [
                a * ((a + 1.0) - (a - 1.0) * cw + sa),
                2.0 * a * ((a - 1.0) - (a + 1.0) * cw),
                a * ((a + 1.0) - (a - 1.0) * cw - sa),
            ],
            [(a + 1.0) + (a - 1.0) * cw + sa, -2.0 * ((a - 1.0) + (a + 1.0) * cw), (a + 1.0) + (a - 1.0) * cw - sa],
        ),
        FilterKind::HighShelf => (
            [
                a * ((a + 1.0) + (a - 1.0) * cw + sa),
                -2.0 * a * ((a - 1.0) + (a + 1.0) * cw),
                a * ((a + 1.0) + (a - 1.0) * cw - sa),
            ],
            [(a + 1.0) - (a - 1.0) * cw + sa, 2.0 * ((a - 1.0) - (a + 1.0) * cw), (a + 1.0) - (a - 1.0) * cw - sa],
        ),
        FilterKind::Peak => ([1.0 + alpha * a, -2.0 * cw, 1.0 - alpha * a], [1.0 + alpha / a, -2.0 * cw, 1.0 - alpha / a]),
    };
    Ok(BiquadSection { b, a: den })
}

/// `Π_k H_k(e^{jω})` at `ω = 2π f / fs` for each `f`.
pub fn frequency_response(sections: &[BiquadSection], freqs: &[f64], fs: f64) -> Vec<Complex64> {
    freqs
        .iter()
        .map(|&f| {
            let w = 2.0 * PI * f / fs;
            sections.iter().map(|s| s.response(w)).product()
        })
        .collect()
}

/// Direct-form I recursion
/// `a0 y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`.
pub fn lfilter(s: &BiquadSection, x: &[f64]) -> Vec<f64> {
    let [b0, b1, b2] = s.b;
    let [a0, a1, a2] = s.a;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&xn| {
            let y = (b0 * xn + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
            x2 = x1;
            x1 = xn;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Section coefficients on the tape, shaped `[..., 6]` where `...` is the
/// common shape of the parameter tensors (rank 0 for static parameters,
/// `[num_blocks]` for per-block ones).
pub fn section_coeffs<'t>(kind: FilterKind, f0: Var<'t>, gain_db: Option<Var<'t>>, q: Var<'t>, fs: f64) -> Var<'t> {
    let w0 = f0.scale(2.0 * PI / fs);
    let cw = w0.cos();
    let alpha = w0.sin() / q.scale(2.0);
    let parts: [Var<'t>; 6] = match kind {
        FilterKind::Lowpass | FilterKind::Highpass => {
            let (b0, b1) = if kind == FilterKind::Lowpass {
                (cw.affine(-0.5, 0.5), cw.affine(-1.0, 1.0))
            } else {
                (cw.affine(0.5, 0.5), cw.affine(-1.0, -1.0))
            };
            [b0, b1, b0, alpha.add_scalar(1.0), cw.scale(-2.0), alpha.affine(-1.0, 1.0)]
        }
        FilterKind::LowShelf | FilterKind::HighShelf => {
            let g = gain_db.expect("shelf filters need a gain");
            let a = g.scale(LN_10 / 40.0).exp();
            let sa = g.scale(LN_10 / 80.0).exp() * alpha * 2.0;
            let (ap1, am1) = (a.add_scalar(1.0), a.add_scalar(-1.0));
            // s = +1 for the low shelf, -1 for the high shelf
            let s = if kind == FilterKind::LowShelf { 1.0 } else { -1.0 };
            let am1c = am1 * cw;
            let ap1c = ap1 * cw;
            let b0 = a * (ap1 - am1c * s + sa);
            let b1 = a * (am1 - ap1c * s) * (2.0 * s);
            let b2 = a * (ap1 - am1c * s - sa);
            let a0 = ap1 + am1c * s + sa;
            let a1 = (am1 + ap1c * s) * (-2.0 * s);
            let a2 = ap1 + am1c * s - sa;
            [b0, b1, b2, a0, a1, a2]
        }
        FilterKind::Peak => {
            let g = gain_db.expect("peak filters need a gain");
            let a = g.scale(LN_10 / 40.0).exp();
            let aa = alpha * a;
            let ad = alpha / a;
            let m2c = cw.scale(-2.0);
            [aa.add_scalar(1.0), m2c, aa.affine(-1.0, 1.0), ad.add_scalar(1.0), m2c, ad.affine(-1.0, 1.0)]
        }
    };
    let rank = parts[0].shape().len();
    let cols: Vec<Var<'t>> = parts.iter().map(|v| v.unsqueeze(rank)).collect();
    Var::concat(&cols, -1)
}
