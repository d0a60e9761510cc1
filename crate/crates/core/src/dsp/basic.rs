//! Phase inversion, gain and DC offset.

use std::f64::consts::LN_10;

use afx_autodiff::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasicKind {
    PhaseInversion,
    Gain,
    DcOffset,
}

/// Expands a parameter to `[len]` samples. Accepts one value, one value per
/// block of `block_size` samples (held constant within the block) or one
/// value per sample.
pub fn per_sample<'t>(param: Var<'t>, len: usize, block_size: usize) -> Result<Var<'t>> {
    let n = param.numel();
    if n == 1 {
        return Ok(param.reshape(Vec::new()));
    }
    if n == len {
        return Ok(param.reshape(vec![len]));
    }
    if block_size > 0 && n == len.div_ceil(block_size) {
        return Ok(param.reshape(vec![n]).upsample_nearest(block_size, len));
    }
    Err(Error::Shape(format!(
        "parameter with {n} values fits neither {len} samples nor blocks of {block_size}"
    )))
}

/// `y = -x`, `y = x · 10^(gain_dB/20)` or `y = x + offset`.
pub fn apply_basic<'t>(x: Var<'t>, kind: BasicKind, param: Option<Var<'t>>, block_size: usize) -> Result<Var<'t>> {
    let len = x.numel();
    match kind {
        BasicKind::PhaseInversion => Ok(-x),
        BasicKind::Gain => {
            let g = param.ok_or_else(|| Error::InvalidArgument("gain needs a parameter".into()))?;
            let lin = per_sample(g, len, block_size)?.scale(LN_10 / 20.0).exp();
            Ok(x * lin)
        }
        BasicKind::DcOffset => {
            let o = param.ok_or_else(|| Error::InvalidArgument("offset needs a parameter".into()))?;
            Ok(x + per_sample(o, len, block_size)?)
        }
    }
}
