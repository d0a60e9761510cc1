//! Real FFT, inverse real FFT, complex products and biquad responses.
//!
//! Complex tensors are stored as paired real tensors stacked on a leading
//! axis of length 2: `[2, ...]` with real parts first, imaginary second.
//!
//! Conventions: `rfft(x)_k = Σ_n x_n e^{-2πikn/N}` for `k = 0..=N/2`
//! (unnormalized) and `irfft` is its inverse with a `1/N` factor. `irfft`
//! ignores the imaginary parts of the DC and Nyquist bins.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::op::{Contributions, Op};
use crate::tape::{NodeId, Var};
use crate::tensor::{broadcast_shape, Broadcast, Tensor};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Number of bins of a real FFT of length `n`.
pub fn rfft_bins(n: usize) -> usize {
    n / 2 + 1
}

/// Real FFT of one frame, `n/2 + 1` bins.
pub fn rfft_frame(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    assert!(n >= 1, "rfft of empty frame");
    if n % 2 == 1 || n < 4 {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan(n, false).process(&mut buf);
        buf.truncate(rfft_bins(n));
        return buf;
    }
    let h = n / 2;
    let mut z: Vec<Complex64> = (0..h).map(|m| Complex64::new(x[2 * m], x[2 * m + 1])).collect();
    plan(h, false).process(&mut z);
    let mut out = Vec::with_capacity(h + 1);
    for k in 0..=h {
        let zk = z[k % h];
        let zc = z[(h - k) % h].conj();
        let even = (zk + zc) * 0.5;
        let odd = (zk - zc) * Complex64::new(0.0, -0.5);
        let w = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64);
        out.push(even + w * odd);
    }
    out
}

/// Inverse real FFT of `n/2 + 1` bins back to `n` samples.
pub fn irfft_frame(spec: &[Complex64], n: usize) -> Vec<f64> {
    assert_eq!(spec.len(), rfft_bins(n), "irfft of {} bins cannot produce {n} samples", spec.len());
    let mut x = spec.to_vec();
    x[0].im = 0.0;
    if n % 2 == 0 {
        x[n / 2].im = 0.0;
    }
    if n % 2 == 1 || n < 4 {
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            full[k] = if k < x.len() { x[k] } else { x[n - k].conj() };
        }
        plan(n, true).process(&mut full);
        return full.iter().map(|c| c.re / n as f64).collect();
    }
    let h = n / 2;
    let mut z = Vec::with_capacity(h);
    for k in 0..h {
        let a = x[k];
        let b = x[h - k].conj();
        let even = (a + b) * 0.5;
        let w = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
        let odd = (a - b) * 0.5 * w;
        z.push(even + Complex64::new(0.0, 1.0) * odd);
    }
    plan(h, true).process(&mut z);
    let mut out = vec![0.0; n];
    for (m, c) in z.iter().enumerate() {
        out[2 * m] = c.re / h as f64;
        out[2 * m + 1] = c.im / h as f64;
    }
    out
}

/// Weight of bin `k` in the Hermitian sum of an `n`-point inverse transform.
fn hermitian_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

impl<'t> Var<'t> {
    /// Real FFT along the last axis: `[..., n] -> [2, ..., n/2 + 1]`.
    pub fn rfft(self) -> Var<'t> {
        let v = self.value();
        let n = *v.shape().last().expect("rfft of rank-0 tensor");
        let bins = rfft_bins(n);
        let rows = v.numel() / n;
        let mut out = vec![0.0; 2 * rows * bins];
        let (re, im) = out.split_at_mut(rows * bins);
        for r in 0..rows {
            let spec = rfft_frame(&v.data()[r * n..(r + 1) * n]);
            for (k, c) in spec.iter().enumerate() {
                re[r * bins + k] = c.re;
                im[r * bins + k] = c.im;
            }
        }
        let mut shape = vec![2];
        shape.extend_from_slice(&v.shape()[..v.rank() - 1]);
        shape.push(bins);
        self.tape.push(Tensor::new(shape, out), Op::Rfft { x: self.id })
    }

    /// Inverse real FFT along the last axis: `[2, ..., n/2 + 1] -> [..., n]`.
    pub fn irfft(self, n: usize) -> Var<'t> {
        let v = self.value();
        assert!(v.rank() >= 2 && v.shape()[0] == 2, "irfft expects [2, ..., bins], got {:?}", v.shape());
        let bins = *v.shape().last().unwrap();
        assert_eq!(bins, rfft_bins(n), "irfft: {bins} bins do not match n = {n}");
        let rows = v.numel() / (2 * bins);
        let (re, im) = v.data().split_at(rows * bins);
        let mut out = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let spec: Vec<Complex64> =
                (0..bins).map(|k| Complex64::new(re[r * bins + k], im[r * bins + k])).collect();
            out.extend(irfft_frame(&spec, n));
        }
        let mut shape = v.shape()[1..v.rank() - 1].to_vec();
        shape.push(n);
        self.tape.push(Tensor::new(shape, out), Op::Irfft { x: self.id })
    }

    /// Complex product of paired tensors `[2, ...]`, broadcasting the
    /// trailing axes.
    pub fn complex_mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        assert!(a.shape()[0] == 2 && b.shape()[0] == 2, "complex_mul expects [2, ...] operands");
        let half = broadcast_shape(&a.shape()[1..], &b.shape()[1..])
            .unwrap_or_else(|| panic!("complex_mul cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
        let n: usize = half.iter().product();
        let ma = Broadcast::new(&a.shape()[1..], &half);
        let mb = Broadcast::new(&b.shape()[1..], &half);
        let (ar, ai) = a.data().split_at(a.numel() / 2);
        let (br, bi) = b.data().split_at(b.numel() / 2);
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            let (ja, jb) = (ma.index(i), mb.index(i));
            out[i] = ar[ja] * br[jb] - ai[ja] * bi[jb];
            out[n + i] = ar[ja] * bi[jb] + ai[ja] * br[jb];
        }
        let mut shape = vec![2];
        shape.extend(half);
        self.tape.push(Tensor::new(shape, out), Op::ComplexMul { a: self.id, b: rhs.id })
    }

    /// Frequency response of second-order sections on the `n_fft`-point
    /// real-FFT grid.
    ///
    /// `self` holds `[..., 6]` coefficient rows `(b0, b1, b2, a0, a1, a2)`;
    /// the result is `[2, ..., n_fft/2 + 1]` with
    /// `H(e^{jω}) = (b0 + b1 e^{-jω} + b2 e^{-2jω}) / (a0 + a1 e^{-jω} + a2 e^{-2jω})`
    /// at `ω_k = 2πk / n_fft`.
    pub fn biquad_response(self, n_fft: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.shape().last(), Some(&6), "biquad_response expects [..., 6], got {:?}", v.shape());
        let rows = v.numel() / 6;
        let bins = rfft_bins(n_fft);
        let basis = unit_circle(n_fft);
        let mut out = vec![0.0; 2 * rows * bins];
        let (re, im) = out.split_at_mut(rows * bins);
        for r in 0..rows {
            let c = &v.data()[r * 6..r * 6 + 6];
            for (k, (z1, z2)) in basis.iter().enumerate() {
                let num = Complex64::new(c[0], 0.0) + z1 * c[1] + z2 * c[2];
                let den = Complex64::new(c[3], 0.0) + z1 * c[4] + z2 * c[5];
                let h = num / den;
                re[r * bins + k] = h.re;
                im[r * bins + k] = h.im;
            }
        }
        let mut shape = vec![2];
        shape.extend_from_slice(&v.shape()[..v.rank() - 1]);
        shape.push(bins);
        self.tape.push(Tensor::new(shape, out), Op::BiquadResponse { coeffs: self.id })
    }
}

/// `(e^{-jω_k}, e^{-2jω_k})` on the real-FFT grid.
fn unit_circle(n_fft: usize) -> Vec<(Complex64, Complex64)> {
    (0..rfft_bins(n_fft))
        .map(|k| {
            let w = 2.0 * PI * k as f64 / n_fft as f64;
            (Complex64::from_polar(1.0, -w), Complex64::from_polar(1.0, -2.0 * w))
        })
        .collect()
}

pub(crate) fn rfft_backward(g: &[f64], in_shape: &[usize]) -> Vec<f64> {
    let n = *in_shape.last().unwrap();
    let bins = rfft_bins(n);
    let rows = in_shape.iter().product::<usize>() / n;
    let (gre, gim) = g.split_at(rows * bins);
    let mut dx = Vec::with_capacity(rows * n);
    for r in 0..rows {
        // dx_m = Σ_k Re(G_k e^{+iθ_km}); expressed through irfft with the
        // Hermitian weights undone.
        let spec: Vec<Complex64> = (0..bins)
            .map(|k| Complex64::new(gre[r * bins + k], gim[r * bins + k]) * (n as f64 / hermitian_weight(k, n)))
            .collect();
        if n % 2 == 0 {
            dx.extend(irfft_frame(&spec, n));
        } else {
            let mut full = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..bins {
                full[k] = Complex64::new(gre[r * bins + k], gim[r * bins + k]);
            }
            plan(n, true).process(&mut full);
            dx.extend(full.iter().map(|c| c.re));
        }
    }
    dx
}

pub(crate) fn irfft_backward(g: &[f64], in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let n = *out_shape.last().unwrap();
    let bins = *in_shape.last().unwrap();
    let rows = g.len() / n;
    let mut dx = vec![0.0; 2 * rows * bins];
    let (dre, dim) = dx.split_at_mut(rows * bins);
    for r in 0..rows {
        let spec = rfft_frame(&g[r * n..(r + 1) * n]);
        for k in 0..bins {
            let w = hermitian_weight(k, n) / n as f64;
            dre[r * bins + k] = w * spec[k].re;
            let ignored = k == 0 || (n % 2 == 0 && k == n / 2);
            dim[r * bins + k] = if ignored { 0.0 } else { w * spec[k].im };
        }
    }
    dx
}

pub(crate) fn complex_mul_backward(
    g: &[f64],
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    ia: NodeId,
    ib: NodeId,
    wants: &dyn Fn(NodeId) -> bool,
) -> Contributions {
    let half = &out.shape()[1..];
    let n = out.numel() / 2;
    let (gr, gi) = g.split_at(n);
    let mut res = Vec::with_capacity(2);
    // grad wrt one factor = G · conj(other factor)
    let grad_for = |own: &Tensor, other: &Tensor| -> Vec<f64> {
        let mo = Broadcast::new(&other.shape()[1..], half);
        let mown = Broadcast::new(&own.shape()[1..], half);
        let (or, oi) = other.data().split_at(other.numel() / 2);
        let mut dre = vec![0.0; n];
        let mut dim = vec![0.0; n];
        for i in 0..n {
            let j = mo.index(i);
            dre[i] = gr[i] * or[j] + gi[i] * oi[j];
            dim[i] = gi[i] * or[j] - gr[i] * oi[j];
        }
        let len = own.numel() / 2;
        let mut d = mown.reduce(&dre, len);
        d.extend(mown.reduce(&dim, len));
        d
    };
    if wants(ia) {
        res.push((ia, grad_for(a, b)));
    }
    if wants(ib) {
        res.push((ib, grad_for(b, a)));
    }
    res
}

pub(crate) fn biquad_response_backward(g: &[f64], coeffs: &Tensor, out: &Tensor) -> Vec<f64> {
    let rows = coeffs.numel() / 6;
    let bins = *out.shape().last().unwrap();
    let n_fft = 2 * (bins - 1);
    let basis = unit_circle(n_fft);
    let (gre, gim) = g.split_at(rows * bins);
    let mut dc = vec![0.0; rows * 6];
    for r in 0..rows {
        let c = &coeffs.data()[r * 6..r * 6 + 6];
        let mut acc = [0.0; 6];
        for (k, (z1, z2)) in basis.iter().enumerate() {
            let den = Complex64::new(c[3], 0.0) + z1 * c[4] + z2 * c[5];
            let num = Complex64::new(c[0], 0.0) + z1 * c[1] + z2 * c[2];
            let inv_den = den.inv();
            let h = num * inv_den;
            let gk_conj = Complex64::new(gre[r * bins + k], -gim[r * bins + k]);
            let powers = [Complex64::new(1.0, 0.0), *z1, *z2];
            for (i, zp) in powers.iter().enumerate() {
                acc[i] += (gk_conj * zp * inv_den).re;
                acc[3 + i] -= (gk_conj * h * zp * inv_den).re;
            }
        }
        dc[r * 6..r * 6 + 6].copy_from_slice(&acc);
    }
    dc
}
