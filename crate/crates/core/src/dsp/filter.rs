//! Frequency-sampling application of biquad cascades.

use afx_autodiff::{Precision, Tape, Tensor, Var};

use super::biquad::BiquadSection;
use crate::error::{Error, Result};

/// Smallest power of two `>= 8 * len`.
pub fn fft_size_for(len: usize) -> usize {
    (8 * len.max(1)).next_power_of_two()
}

/// Cascade frequency response on the `n_fft` real-FFT grid.
///
/// `coeffs` is `[K, 6]` (static, result `[2, F]`) or `[NB, K, 6]` (one
/// cascade per block, result `[2, NB, F]`).
pub fn cascade_response<'t>(coeffs: Var<'t>, n_fft: usize) -> Var<'t> {
    let shape = coeffs.shape();
    let per_section = coeffs.biquad_response(n_fft);
    let k_axis = shape.len() - 1;
    let k = shape[k_axis - 1];
    let mut h = per_section.slice(k_axis as isize, 0, 1);
    for i in 1..k {
        h = h.complex_mul(per_section.slice(k_axis as isize, i, i + 1));
    }
    let mut out = h.shape();
    out.remove(k_axis);
    h.reshape(out)
}

/// Filters `x: [T]` by the cascade `coeffs` using frequency sampling:
/// `y = irfft(rfft(pad(x)) · H)[..T]` with `H` sampled on the `fft_size`
/// grid.
///
/// Static `coeffs` are `[K, 6]`. Per-block `coeffs` are `[NB, K, 6]` with
/// `NB = ceil(T / block_size)`; output samples of block `b` take the
/// response of cascade `b`.
pub fn apply_filter<'t>(x: Var<'t>, coeffs: Var<'t>, block_size: usize, fft_size: usize) -> Result<Var<'t>> {
    let xs = x.shape();
    if xs.len() != 1 {
        return Err(Error::Shape(format!("filter input must be [time], got {xs:?}")));
    }
    let t = xs[0];
    if fft_size < t || !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fft_size {fft_size} must be a power of two no smaller than the signal length {t}"
        )));
    }
    let cs = coeffs.shape();
    if cs.last() != Some(&6) || !(cs.len() == 2 || cs.len() == 3) {
        return Err(Error::Shape(format!("filter coefficients must be [K, 6] or [blocks, K, 6], got {cs:?}")));
    }
    let spec = x.pad(0, 0, fft_size - t).rfft();
    let h = cascade_response(coeffs, fft_size);
    if cs.len() == 2 {
        return Ok(spec.complex_mul(h).irfft(fft_size).slice(0, 0, t));
    }
    let nb = cs[0];
    if block_size == 0 || nb != t.div_ceil(block_size) {
        return Err(Error::Shape(format!("{nb} coefficient blocks do not cover {t} samples in blocks of {block_size}")));
    }
    // [2, F] x [2, NB, F] -> [NB, fft_size]
    let rows = spec.unsqueeze(1).complex_mul(h).irfft(fft_size);
    if nb == 1 {
        return Ok(rows.select(0).slice(0, 0, t));
    }
    let pieces: Vec<Var<'t>> = (0..nb)
        .map(|b| {
            let lo = b * block_size;
            let hi = (lo + block_size).min(t);
            rows.select(b).slice(0, lo, hi)
        })
        .collect();
    Ok(Var::concat(&pieces, 0))
}

/// Frequency-sampling filter on plain samples.
pub fn filter_signal(x: &[f64], sections: &[BiquadSection], fft_size: usize) -> Result<Vec<f64>> {
    if sections.is_empty() {
        return Err(Error::InvalidArgument("filter cascade needs at least one section".into()));
    }
    let tape = Tape::inference(Precision::F64);
    let data: Vec<f64> = sections.iter().flat_map(|s| s.coeffs()).collect();
    let coeffs = tape.constant(Tensor::new(vec![sections.len(), 6], data));
    let y = apply_filter(tape.constant(Tensor::from_vec(x.to_vec())), coeffs, x.len().max(1), fft_size)?;
    Ok(y.to_vec())
}
