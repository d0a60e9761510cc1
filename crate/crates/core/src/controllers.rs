//! Controllers producing normalized processor parameters in `[0, 1]`.

use afx_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, Lstm, Mlp, ParamId, ParamStore, Params, RecState, Rng};

/// Default samples per control block.
pub const DEFAULT_BLOCK_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// No parameters.
    Dummy,
    /// `g = σ(b)` with trainable `b`.
    Static,
    /// `g = MLP(c)` with sigmoid output.
    StaticCond {
        #[serde(default = "default_mlp_layers")]
        layers: usize,
        #[serde(default = "default_mlp_hidden")]
        hidden: usize,
    },
    /// Block-averaged input through a stacked LSTM of width `P`, sigmoid.
    Dynamic {
        #[serde(default = "default_lstm_layers")]
        num_layers: usize,
    },
    /// As [`ControllerSpec::Dynamic`] with the controls appended per block.
    DynamicCond {
        #[serde(default = "default_lstm_layers")]
        num_layers: usize,
    },
}

fn default_mlp_layers() -> usize {
    3
}
fn default_mlp_hidden() -> usize {
    16
}
fn default_lstm_layers() -> usize {
    1
}

impl ControllerSpec {
    pub fn static_cond() -> Self {
        ControllerSpec::StaticCond { layers: default_mlp_layers(), hidden: default_mlp_hidden() }
    }

    pub fn dynamic() -> Self {
        ControllerSpec::Dynamic { num_layers: 1 }
    }

    pub fn dynamic_cond() -> Self {
        ControllerSpec::DynamicCond { num_layers: 1 }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, ControllerSpec::Dynamic { .. } | ControllerSpec::DynamicCond { .. })
    }

    pub fn needs_controls(self) -> bool {
        matches!(self, ControllerSpec::StaticCond { .. } | ControllerSpec::DynamicCond { .. })
    }

    /// Suffix used in chain notation (`G.s`, `PEQ.dc`).
    pub fn suffix(self) -> &'static str {
        match self {
            ControllerSpec::Dummy => "",
            ControllerSpec::Static => "s",
            ControllerSpec::StaticCond { .. } => "sc",
            ControllerSpec::Dynamic { .. } => "d",
            ControllerSpec::DynamicCond { .. } => "dc",
        }
    }
}

/// Normalized parameters: `[P]` (static) or `[NB, P]` (per block).
#[derive(Debug, Clone, Copy)]
pub struct ControlOutput<'t> {
    pub values: Var<'t>,
    pub block_size: usize,
}

impl<'t> ControlOutput<'t> {
    pub fn is_dynamic(&self) -> bool {
        self.values.shape().len() == 2
    }
}

#[derive(Debug, Clone)]
enum Net {
    None,
    Bias(ParamId),
    Mlp(Mlp),
    Lstm(Lstm),
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub spec: ControllerSpec,
    pub num_params: usize,
    pub num_controls: usize,
    net: Net,
}

impl Controller {
    pub fn build(
        spec: ControllerSpec,
        num_params: usize,
        num_controls: usize,
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
    ) -> Result<Self> {
        if spec == ControllerSpec::Dummy && num_params != 0 {
            return Err(Error::InvalidParameter(format!(
                "dummy controller cannot drive a processor with {num_params} parameters"
            )));
        }
        if spec != ControllerSpec::Dummy && num_params == 0 {
            return Err(Error::InvalidParameter("a processor without parameters takes the dummy controller".into()));
        }
        if spec.needs_controls() && num_controls == 0 {
            return Err(Error::InvalidParameter(format!("{} controller needs at least one control", spec.suffix())));
        }
        let net = match spec {
            ControllerSpec::Dummy => Net::None,
            ControllerSpec::Static => Net::Bias(store.add(format!("{name}.bias"), Tensor::zeros(vec![num_params]))),
            ControllerSpec::StaticCond { layers, hidden } => {
                if layers < 1 || hidden < 1 {
                    return Err(Error::InvalidParameter("conditional controller needs layers and hidden >= 1".into()));
                }
                let mut widths = vec![num_controls];
                widths.extend(std::iter::repeat(hidden).take(layers - 1));
                widths.push(num_params);
                Net::Mlp(Mlp::new(store, rng, name, &widths, Act::Tanh, Act::Sigmoid))
            }
            ControllerSpec::Dynamic { num_layers } | ControllerSpec::DynamicCond { num_layers } => {
                if num_layers < 1 {
                    return Err(Error::InvalidParameter("dynamic controller needs num_layers >= 1".into()));
                }
                let n_in = if spec.needs_controls() { 1 + num_controls } else { 1 };
                Net::Lstm(Lstm::new(store, rng, name, n_in, num_params, num_layers))
            }
        };
        Ok(Self { spec, num_params, num_controls, net })
    }

    pub fn zero_state(&self) -> Vec<RecState> {
        match &self.net {
            Net::Lstm(l) => l.zero_state(),
            _ => Vec::new(),
        }
    }

    /// Parameters for a stage whose input is `x: [T]`. `c` is required by
    /// conditional controllers. Returns the carried recurrent state.
    pub fn forward<'t>(
        &self,
        p: &Params<'t>,
        x: Var<'t>,
        c: Option<Var<'t>>,
        state: Option<&[RecState]>,
        block_size: usize,
    ) -> Result<(ControlOutput<'t>, Vec<RecState>)> {
        if block_size == 0 {
            return Err(Error::InvalidArgument("block size must be at least 1".into()));
        }
        let tape = p.tape();
        let c = if self.spec.needs_controls() {
            let c = c.ok_or_else(|| Error::InvalidArgument("conditional controller called without controls".into()))?;
            if c.shape() != [self.num_controls] {
                return Err(Error::Shape(format!("expected {} controls, got shape {:?}", self.num_controls, c.shape())));
            }
            Some(c)
        } else {
            None
        };
        let out = |values| ControlOutput { values, block_size };
        match &self.net {
            Net::None => Ok((out(tape.constant(Tensor::zeros(vec![0]))), Vec::new())),
            Net::Bias(b) => Ok((out(p.get(*b).sigmoid()), Vec::new())),
            Net::Mlp(m) => Ok((out(m.forward(p, c.expect("checked"))), Vec::new())),
            Net::Lstm(l) => {
                if x.shape().len() != 1 || x.numel() == 0 {
                    return Err(Error::Shape(format!("controller input must be a non-empty [time], got {:?}", x.shape())));
                }
                let seq = block_sequence(x, c, block_size);
                let (h, st) = l.forward(p, seq, state);
                Ok((out(h.sigmoid()), st))
            }
        }
    }
}

/// `[NB, 1 + nc]`: block means of `x` with the controls repeated per block.
pub fn block_sequence<'t>(x: Var<'t>, c: Option<Var<'t>>, block_size: usize) -> Var<'t> {
    let pooled = x.avg_pool1d(block_size);
    let nb = pooled.numel();
    let pooled = pooled.reshape(vec![nb, 1]);
    match c {
        Some(c) => Var::concat(&[pooled, c.unsqueeze(0).repeat(0, nb)], 1),
        None => pooled,
    }
}
