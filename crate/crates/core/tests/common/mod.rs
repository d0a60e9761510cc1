#![allow(dead_code)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use afx_autodiff::{grad_check, Tape, Tensor, Var};
use afx_core::data::{Recording, Segment};
use afx_core::dsp::{biquad_coefficients, lfilter, FilterKind, FilterParams};
use afx_core::models::ModelSpec;
use afx_core::nn::{ParamStore, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FS: f64 = 48000.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise(n: usize, amp: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| amp * r.gen_range(-1.0..1.0)).collect()
}

pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), noise(n, 1.0, seed))
}

/// Bursts of 100 ms: uniform noise or a log-uniform tone in 20 Hz - 20 kHz,
/// each at a random level in [0.05, 0.5].
pub fn noise_and_tones(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let block = (FS / 10.0) as usize;
    let mut x = vec![0.0; n];
    for (b, chunk) in x.chunks_mut(block).enumerate() {
        let amp = r.gen_range(0.05..0.5);
        if r.gen_bool(0.3) {
            let f = 20.0 * 1000f64.powf(r.gen::<f64>());
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = amp * (2.0 * PI * f * (b * block + i) as f64 / FS).sin();
            }
        } else {
            // uniform noise scaled to the tone's RMS
            for v in chunk.iter_mut() {
                *v = amp * 1.2247 * r.gen_range(-1.0..1.0);
            }
        }
    }
    x
}

pub fn lowpass(f0: f64) -> afx_core::dsp::BiquadSection {
    biquad_coefficients(&FilterParams { kind: FilterKind::Lowpass, f0, gain_db: 0.0, q: FRAC_1_SQRT_2, fs: FS }).unwrap()
}

/// Reference distortion device: `tanh(drive · lowpass_2k(x))`.
pub fn device(x: &[f64], drive: f64) -> Vec<f64> {
    lfilter(&lowpass(2000.0), x).iter().map(|v| (drive * v).tanh()).collect()
}

/// Recordings of `n` seconds each, the device run over the whole file.
pub fn device_recordings(count: usize, seconds: f64, seed: u64, drive: impl Fn(usize) -> (f64, Vec<f64>)) -> Vec<Recording> {
    (0..count)
        .map(|i| {
            let x = noise_and_tones((seconds * FS) as usize, seed + i as u64);
            let (d, controls) = drive(i);
            let y = device(&x, d);
            Recording { x, y, controls, split: None }
        })
        .collect()
}

pub fn segment_of(x: Vec<f64>, y: Vec<f64>, controls: Vec<f64>) -> Segment {
    Segment { x, y, controls, entry: 0, offset: 0 }
}

pub fn spec(json: &str) -> ModelSpec {
    serde_json::from_str(json).unwrap()
}

pub fn graybox_spec(stages: &[(&str, &str)], num_controls: usize) -> ModelSpec {
    let stages: Vec<serde_json::Value> = stages
        .iter()
        .map(|(p, c)| serde_json::json!({"processor": {"type": p}, "controller": {"type": c}}))
        .collect();
    serde_json::from_value(serde_json::json!({
        "sample_rate": FS,
        "num_controls": num_controls,
        "model": {"type": "graybox", "stages": stages}
    }))
    .unwrap()
}

/// Finite-difference check over every tensor of `store` plus `extra`
/// inputs; `f` gets the bound parameters and the extra vars.
pub fn store_grad_check(
    store: &ParamStore,
    extra: &[Tensor],
    f: impl for<'t> Fn(&Params<'t>, &[Var<'t>]) -> Var<'t>,
) -> f64 {
    let mut inputs: Vec<Tensor> = store.entries().iter().map(|e| e.value.clone()).collect();
    let k = inputs.len();
    inputs.extend(extra.iter().cloned());
    grad_check(
        |tape: &Tape, vars: &[Var<'_>]| {
            let p = Params::from_vars(tape, vars[..k].to_vec());
            f(&p, &vars[k..])
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}

/// `Σ w ⊙ y` with fixed pseudo-random weights, so every element matters.
pub fn project<'t>(y: Var<'t>, seed: u64) -> Var<'t> {
    let w = y.tape().constant(tensor(&y.shape(), seed ^ 0x5eed));
    (y * w).sum()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
    let den: f64 = b.iter().map(|v| v * v).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Directional finite-difference check per parameter tensor: for two random
/// unit directions `v` restricted to each tensor, compares `∇f · v` with
/// `(f(θ + εv) - f(θ - εv)) / 2ε`. Returns the worst relative error, with
/// the same `max(|analytic|, |numeric|, 1e-8)` denominator as `grad_check`.
pub fn directional_check(store: &ParamStore, f: impl for<'t> Fn(&Params<'t>) -> Var<'t>) -> f64 {
    let eps = 1e-5;
    let values: Vec<Tensor> = store.entries().iter().map(|e| e.value.clone()).collect();
    let eval = |vals: &[Tensor]| {
        let tape = Tape::with_precision(afx_autodiff::Precision::F64);
        let p = Params::from_vars(&tape, vals.iter().map(|v| tape.constant(v.clone())).collect());
        f(&p).item()
    };
    let tape = Tape::with_precision(afx_autodiff::Precision::F64);
    let vars: Vec<Var<'_>> = values.iter().map(|v| tape.var(v.clone())).collect();
    let root = f(&Params::from_vars(&tape, vars.clone()));
    let grads = tape.backward(root).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v).unwrap().clone();
        for d in 0..2 {
            let dir = noise(g.numel(), 1.0, 7919 * k as u64 + d);
            let norm = dir.iter().map(|u| u * u).sum::<f64>().sqrt();
            let analytic: f64 = g.data().iter().zip(&dir).map(|(a, u)| a * u / norm).sum();
            let shifted = |s: f64| {
                let mut vals = values.clone();
                for (w, u) in vals[k].data_mut().iter_mut().zip(&dir) {
                    *w += s * eps * u / norm;
                }
                eval(&vals)
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
