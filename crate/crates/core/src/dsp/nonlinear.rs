//! Memoryless nonlinearities and the SIREN-stored FIR filter.

use afx_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Params, Rng, Siren};

/// Inputs of the rational nonlinearity are clamped to this magnitude.
pub const RATIONAL_INPUT_LIMIT: f64 = 8.0;

const RATIONAL_TANH: &str = include_str!("../../data/rational_tanh.json");
const SIREN_TANH: &str = include_str!("../../data/siren_tanh.json");

/// Coefficients of `R(x) = (a0 + a1 x + ... + a6 x^6) / (1 + b1 x + ... + b5 x^5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalCoeffs {
    pub numerator: [f64; 7],
    pub denominator: [f64; 5],
}

impl RationalCoeffs {
    /// Least-squares `[6, 5]` fit of `tanh` on `[-4, 4]`.
    pub fn tanh_fit() -> Self {
        serde_json::from_str(RATIONAL_TANH).expect("bundled rational fit is valid")
    }

    /// `R(x) = x`.
    pub fn identity() -> Self {
        let mut numerator = [0.0; 7];
        numerator[1] = 1.0;
        Self { numerator, denominator: [0.0; 5] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(-RATIONAL_INPUT_LIMIT, RATIONAL_INPUT_LIMIT);
        let p = self.numerator.iter().rev().fold(0.0, |acc, a| acc * x + a);
        let q = self.denominator.iter().rev().fold(0.0, |acc, b| acc * x + b);
        p / (1.0 + x * q)
    }
}

/// Rational function with coefficient vectors `numerator: [7]` and
/// `denominator: [5]` on the tape; `x` is clamped to `±8` first.
pub fn rational_eval<'t>(x: Var<'t>, numerator: Var<'t>, denominator: Var<'t>) -> Var<'t> {
    let x = x.clamp(-RATIONAL_INPUT_LIMIT, RATIONAL_INPUT_LIMIT);
    let mut p = numerator.select(6);
    for i in (0..6).rev() {
        p = p * x + numerator.select(i);
    }
    let mut q = denominator.select(4);
    for j in (0..4).rev() {
        q = q * x + denominator.select(j);
    }
    p / (q * x + 1.0)
}

#[derive(Deserialize)]
struct SirenFile {
    omega_first: f64,
    omega_hidden: f64,
    fit_range: [f64; 2],
    layers: Vec<SirenLayer>,
}

#[derive(Deserialize)]
struct SirenLayer {
    shape: [usize; 2],
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Pre-fitted SIREN approximating `tanh`.
#[derive(Debug, Clone)]
pub struct SirenTanh {
    pub omega_first: f64,
    pub omega_hidden: f64,
    /// Interval the fit was made on; inputs are clamped to it.
    pub fit_range: [f64; 2],
    pub weights: Vec<(Tensor, Tensor)>,
}

impl SirenTanh {
    pub fn load() -> Self {
        let f: SirenFile = serde_json::from_str(SIREN_TANH).expect("bundled SIREN fit is valid");
        let weights = f
            .layers
            .into_iter()
            .map(|l| (Tensor::new(l.shape.to_vec(), l.weight), Tensor::new(vec![l.shape[1]], l.bias)))
            .collect();
        Self { omega_first: f.omega_first, omega_hidden: f.omega_hidden, fit_range: f.fit_range, weights }
    }
}

/// Memoryless curve stored in a SIREN, initialized from [`SirenTanh`].
#[derive(Debug, Clone)]
pub struct MlpNonlinearity {
    pub net: Siren,
    pub input_range: [f64; 2],
}

impl MlpNonlinearity {
    pub fn new(store: &mut ParamStore, name: &str) -> Self {
        let fit = SirenTanh::load();
        let net = Siren::from_weights(store, name, fit.weights, fit.omega_first, fit.omega_hidden);
        Self { net, input_range: fit.fit_range }
    }

    /// `x: [T] -> [T]`.
    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>) -> Var<'t> {
        let t = x.numel();
        let x = x.clamp(self.input_range[0], self.input_range[1]).reshape(vec![t, 1]);
        self.net.forward(p, x).reshape(vec![t])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirConfig {
    /// Number of taps `N + 1`.
    #[serde(default = "FirConfig::default_taps")]
    pub taps: usize,
    #[serde(default = "FirConfig::default_hidden")]
    pub hidden: usize,
    /// Number of hidden layers.
    #[serde(default = "FirConfig::default_layers")]
    pub layers: usize,
}

impl FirConfig {
    fn default_taps() -> usize {
        128
    }
    fn default_hidden() -> usize {
        32
    }
    fn default_layers() -> usize {
        2
    }
}

impl Default for FirConfig {
    fn default() -> Self {
        Self { taps: Self::default_taps(), hidden: Self::default_hidden(), layers: Self::default_layers() }
    }
}

/// FIR filter whose taps are produced by a SIREN evaluated on the tap grid
/// `t_i = -1 + 2i/N`.
#[derive(Debug, Clone)]
pub struct SirenFir {
    pub net: Siren,
    pub taps: usize,
}

impl SirenFir {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, cfg: &FirConfig) -> Result<Self> {
        if cfg.taps < 1 || cfg.hidden < 1 || cfg.layers < 1 {
            return Err(Error::InvalidParameter(format!("FIR needs taps, hidden and layers >= 1, got {cfg:?}")));
        }
        let mut widths = vec![1];
        widths.extend(std::iter::repeat(cfg.hidden).take(cfg.layers));
        widths.push(1);
        Ok(Self { net: Siren::new(store, rng, name, &widths, 30.0, 1.0), taps: cfg.taps })
    }

    fn grid(&self, reversed: bool) -> Tensor {
        let n = self.taps;
        let pos = |i: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
        let data = (0..n).map(|k| pos(if reversed { n - 1 - k } else { k })).collect();
        Tensor::new(vec![n, 1], data)
    }

    /// Tap values `b_0 .. b_N`.
    pub fn taps<'t>(&self, p: &Params<'t>) -> Var<'t> {
        let grid = p.tape().constant(self.grid(false));
        self.net.forward(p, grid).reshape(vec![self.taps])
    }

    /// `y[n] = Σ b_i x[n - i]`.
    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>) -> Var<'t> {
        // taps in reversed order form the causal convolution kernel
        let grid = p.tape().constant(self.grid(true));
        let kernel = self.net.forward(p, grid).reshape(vec![1, 1, self.taps]);
        convolve(x, kernel)
    }
}

fn convolve<'t>(x: Var<'t>, kernel: Var<'t>) -> Var<'t> {
    let t = x.numel();
    x.reshape(vec![1, t]).conv1d(kernel, None, 1).reshape(vec![t])
}

/// Causal FIR filtering of `x: [T]` with explicit taps `b: [N + 1]`.
pub fn filter_with_taps<'t>(x: Var<'t>, taps: Var<'t>) -> Var<'t> {
    let n = taps.numel();
    let rev: Vec<Var<'t>> = (0..n).rev().map(|i| taps.slice(0, i, i + 1)).collect();
    convolve(x, Var::concat(&rev, 0).reshape(vec![1, 1, n]))
}
