//! Finite-difference verification of tape gradients.

use crate::tape::{Precision, Tape, Var};
use crate::tensor::Tensor;
use crate::AdError;

/// Largest elementwise relative error between tape gradients and central
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)` over every input element.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`. Everything runs at
/// 64-bit precision regardless of the inputs' origin.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::with_precision(Precision::F64);
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let root = f(&tape, &vars);
    check_finite(root.item())?;
    let grads = tape.backward(root)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64, AdError> {
        let tape = Tape::inference(Precision::F64);
        let vars: Vec<Var<'_>> = perturbed.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars).item();
        check_finite(y)?;
        Ok(y)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v)?.data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn check_finite(v: f64) -> Result<(), AdError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(AdError::NonFinite { value: v })
    }
}
