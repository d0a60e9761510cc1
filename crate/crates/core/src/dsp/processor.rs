//! Processor configuration and the runtime used by gray-box chains.
//!
//! Physical parameter vectors are ordered per section as `(f0, q)` for
//! lowpass/highpass and `(f0, gain_db, q)` for shelves and peaks.

use afx_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::basic::{apply_basic, BasicKind};
use super::biquad::{section_coeffs, FilterKind};
use super::filter::{apply_filter, fft_size_for};
use super::nonlinear::{rational_eval, FirConfig, MlpNonlinearity, RationalCoeffs, SirenFir};
use super::range::ParamRange;
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Params, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessorKind {
    PhaseInversion,
    Gain,
    DcOffset,
    Lowpass,
    Highpass,
    Lowshelf,
    Highshelf,
    Peak,
    ParametricEq,
    ShelvingEq,
    Fir,
    Tanh,
    Rational,
    Mlp,
}

impl ProcessorKind {
    /// Filter sections, in cascade order.
    pub fn sections(self) -> &'static [FilterKind] {
        use FilterKind::*;
        match self {
            ProcessorKind::Lowpass => &[Lowpass],
            ProcessorKind::Highpass => &[Highpass],
            ProcessorKind::Lowshelf => &[LowShelf],
            ProcessorKind::Highshelf => &[HighShelf],
            ProcessorKind::Peak => &[Peak],
            ProcessorKind::ParametricEq => &[LowShelf, Peak, Peak, Peak, HighShelf],
            ProcessorKind::ShelvingEq => &[Highpass, LowShelf, HighShelf, Lowpass],
            _ => &[],
        }
    }

    /// Number of externally controlled parameters.
    pub fn num_params(self) -> usize {
        match self {
            ProcessorKind::Gain | ProcessorKind::DcOffset => 1,
            _ => self.sections().iter().map(|k| k.num_params()).sum(),
        }
    }

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            ProcessorKind::PhaseInversion => "phase_inversion",
            ProcessorKind::Gain => "gain",
            ProcessorKind::DcOffset => "dc_offset",
            ProcessorKind::Lowpass => "lowpass",
            ProcessorKind::Highpass => "highpass",
            ProcessorKind::Lowshelf => "lowshelf",
            ProcessorKind::Highshelf => "highshelf",
            ProcessorKind::Peak => "peak",
            ProcessorKind::ParametricEq => "parametric_eq",
            ProcessorKind::ShelvingEq => "shelving_eq",
            ProcessorKind::Fir => "fir",
            ProcessorKind::Tanh => "tanh",
            ProcessorKind::Rational => "rational",
            ProcessorKind::Mlp => "mlp",
        }
    }

    /// Names of the physical parameters, in vector order.
    pub fn param_names(self) -> Vec<String> {
        match self {
            ProcessorKind::Gain => vec!["gain_db".into()],
            ProcessorKind::DcOffset => vec!["offset".into()],
            _ => {
                let secs = self.sections();
                let mut names = Vec::new();
                for (i, k) in secs.iter().enumerate() {
                    let prefix = if secs.len() > 1 { format!("{}{}.", section_label(*k), i) } else { String::new() };
                    names.push(format!("{prefix}f0"));
                    if k.has_gain() {
                        names.push(format!("{prefix}gain_db"));
                    }
                    names.push(format!("{prefix}q"));
                }
                names
            }
        }
    }

    /// Default physical ranges for every controlled parameter.
    pub fn default_ranges(self, fs: f64) -> Vec<ParamRange> {
        match self {
            ProcessorKind::Gain => vec![ParamRange::chain_gain()],
            ProcessorKind::DcOffset => vec![ParamRange::offset()],
            _ => {
                let mut r = Vec::new();
                for k in self.sections() {
                    r.push(ParamRange::frequency(fs));
                    if k.has_gain() {
                        r.push(ParamRange::eq_gain());
                    }
                    r.push(ParamRange::q());
                }
                r
            }
        }
    }
}

fn section_label(k: FilterKind) -> &'static str {
    match k {
        FilterKind::Lowpass => "lp",
        FilterKind::Highpass => "hp",
        FilterKind::LowShelf => "ls",
        FilterKind::HighShelf => "hs",
        FilterKind::Peak => "pk",
    }
}

/// One processor as written in a model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorSpec {
    #[serde(rename = "type")]
    pub kind: ProcessorKind,
    /// Overrides the default physical ranges; one per controlled parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<Vec<ParamRange>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fir: Option<FirConfig>,
}

impl ProcessorSpec {
    pub fn new(kind: ProcessorKind) -> Self {
        Self { kind, ranges: None, fir: None }
    }
}

#[derive(Debug, Clone)]
enum Internal {
    None,
    Rational { numerator: ParamId, denominator: ParamId },
    Mlp(MlpNonlinearity),
    Fir(SirenFir),
}

/// A built processor: ranges resolved and internal weights registered.
#[derive(Debug, Clone)]
pub struct Processor {
    pub kind: ProcessorKind,
    pub ranges: Vec<ParamRange>,
    pub fs: f64,
    internal: Internal,
}

impl Processor {
    pub fn build(spec: &ProcessorSpec, fs: f64, store: &mut ParamStore, rng: &mut Rng, name: &str) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::InvalidParameter(format!("sample rate must be positive, got {fs}")));
        }
        let kind = spec.kind;
        let ranges = match &spec.ranges {
            Some(r) => {
                if r.len() != kind.num_params() {
                    return Err(Error::InvalidParameter(format!(
                        "{} takes {} ranges, got {}",
                        kind.label(),
                        kind.num_params(),
                        r.len()
                    )));
                }
                for range in r {
                    range.validate()?;
                }
                r.clone()
            }
            None => kind.default_ranges(fs),
        };
        if spec.fir.is_some() && kind != ProcessorKind::Fir {
            return Err(Error::InvalidParameter(format!("fir settings given for a {} processor", kind.label())));
        }
        let internal = match kind {
            ProcessorKind::Rational => {
                let c = RationalCoeffs::tanh_fit();
                Internal::Rational {
                    numerator: store.add(format!("{name}.numerator"), Tensor::from_vec(c.numerator.to_vec())),
                    denominator: store.add(format!("{name}.denominator"), Tensor::from_vec(c.denominator.to_vec())),
                }
            }
            ProcessorKind::Mlp => Internal::Mlp(MlpNonlinearity::new(store, name)),
            ProcessorKind::Fir => Internal::Fir(SirenFir::new(store, rng, name, &spec.fir.unwrap_or_default())?),
            _ => Internal::None,
        };
        Ok(Self { kind, ranges, fs, internal })
    }

    pub fn num_params(&self) -> usize {
        self.kind.num_params()
    }

    /// Maps normalized controls `[P]` or `[NB, P]` to physical values of the
    /// same shape.
    pub fn denormalize<'t>(&self, g: Var<'t>) -> Var<'t> {
        let cols: Vec<Var<'t>> =
            self.ranges.iter().enumerate().map(|(i, r)| r.apply(g.slice(-1, i, i + 1))).collect();
        Var::concat(&cols, -1)
    }

    /// Plain-number version of [`Processor::denormalize`] for one vector.
    pub fn denormalize_values(&self, g: &[f64]) -> Vec<f64> {
        self.ranges.iter().zip(g).map(|(r, u)| r.denormalize(*u)).collect()
    }

    /// Applies the processor to `x: [T]` given physical parameters `[P]`
    /// (static) or `[NB, P]` (one row per block of `block_size` samples).
    pub fn forward<'t>(&self, p: &Params<'t>, x: Var<'t>, phys: Option<Var<'t>>, block_size: usize) -> Result<Var<'t>> {
        let np = self.num_params();
        if np > 0 {
            let shape = phys.as_ref().map(|v| v.shape()).unwrap_or_default();
            if shape.last() != Some(&np) || shape.len() > 2 {
                return Err(Error::Shape(format!("{} expects parameters [{np}] or [blocks, {np}], got {shape:?}", self.kind.label())));
            }
        }
        match self.kind {
            ProcessorKind::PhaseInversion => apply_basic(x, BasicKind::PhaseInversion, None, block_size),
            ProcessorKind::Gain => apply_basic(x, BasicKind::Gain, phys, block_size),
            ProcessorKind::DcOffset => apply_basic(x, BasicKind::DcOffset, phys, block_size),
            ProcessorKind::Tanh => Ok(x.tanh()),
            ProcessorKind::Rational => match &self.internal {
                Internal::Rational { numerator, denominator } => Ok(rational_eval(x, p.get(*numerator), p.get(*denominator))),
                _ => unreachable!("rational processor without coefficients"),
            },
            ProcessorKind::Mlp => match &self.internal {
                Internal::Mlp(m) => Ok(m.forward(p, x)),
                _ => unreachable!("mlp processor without network"),
            },
            ProcessorKind::Fir => match &self.internal {
                Internal::Fir(f) => Ok(f.forward(p, x)),
                _ => unreachable!("fir processor without network"),
            },
            _ => {
                let phys = phys.expect("checked above");
                let coeffs = self.coefficients(phys);
                apply_filter(x, coeffs, block_size, fft_size_for(x.numel()))
            }
        }
    }

    /// Cascade coefficients `[K, 6]` or `[NB, K, 6]` of a filter processor.
    pub fn coefficients<'t>(&self, phys: Var<'t>) -> Var<'t> {
        let col = |i: usize| {
            let mut s = phys.shape();
            s.pop();
            phys.slice(-1, i, i + 1).reshape(s)
        };
        let mut i = 0;
        let mut sections = Vec::new();
        for &k in self.kind.sections() {
            let f0 = col(i);
            let gain = if k.has_gain() { Some(col(i + 1)) } else { None };
            let q = col(i + k.num_params() - 1);
            i += k.num_params();
            let c = section_coeffs(k, f0, gain, q, self.fs);
            let rank = c.shape().len();
            sections.push(c.unsqueeze(rank - 1));
        }
        Var::concat(&sections, -2)
    }

    /// Trainable weights owned by the processor itself.
    pub fn internal_params(&self) -> Vec<ParamId> {
        match &self.internal {
            Internal::None => Vec::new(),
            Internal::Rational { numerator, denominator } => vec![*numerator, *denominator],
            Internal::Mlp(m) => m.net.layers.iter().flat_map(|l| std::iter::once(l.w).chain(l.b)).collect(),
            Internal::Fir(f) => f.net.layers.iter().flat_map(|l| std::iter::once(l.w).chain(l.b)).collect(),
        }
    }

    /// FIR taps, when the processor stores them.
    pub fn fir_taps<'t>(&self, p: &Params<'t>) -> Option<Var<'t>> {
        match &self.internal {
            Internal::Fir(f) => Some(f.taps(p)),
            _ => None,
        }
    }
}

/// Parametric EQ on `x` with 15 physical parameters: low shelf, three
/// peaks and high shelf.
pub fn parametric_eq<'t>(x: Var<'t>, params: Var<'t>, fs: f64) -> Result<Var<'t>> {
    filter_group(ProcessorKind::ParametricEq, x, params, fs)
}

/// Shelving EQ on `x` with 10 physical parameters: highpass, low shelf,
/// high shelf and lowpass.
pub fn shelving_eq<'t>(x: Var<'t>, params: Var<'t>, fs: f64) -> Result<Var<'t>> {
    filter_group(ProcessorKind::ShelvingEq, x, params, fs)
}

fn filter_group<'t>(kind: ProcessorKind, x: Var<'t>, params: Var<'t>, fs: f64) -> Result<Var<'t>> {
    let n = kind.num_params();
    if params.shape() != [n] {
        return Err(Error::InvalidParameter(format!("{} takes {n} parameters, got shape {:?}", kind.label(), params.shape())));
    }
    let proc = Processor { kind, ranges: kind.default_ranges(fs), fs, internal: Internal::None };
    let store = ParamStore::new();
    let p = store.bind(x.tape());
    proc.forward(&p, x, Some(params), x.numel())
}
