//! Differentiable audio processors.

pub mod basic;
pub mod biquad;
pub mod filter;
pub mod nonlinear;
pub mod processor;
pub mod range;

pub use basic::{apply_basic, per_sample, BasicKind};
pub use biquad::{biquad_coefficients, frequency_response, lfilter, section_coeffs, BiquadSection, FilterKind, FilterParams};
pub use filter::{apply_filter, cascade_response, fft_size_for, filter_signal};
pub use nonlinear::{filter_with_taps, rational_eval, FirConfig, MlpNonlinearity, RationalCoeffs, SirenFir, SirenTanh};
pub use processor::{parametric_eq, shelving_eq, Processor, ProcessorKind, ProcessorSpec};
pub use range::{ParamRange, Scale};
